//! Computation graph and reverse-mode differentiation.
//!
//! A [`Graph`] is an arena of nodes created in topological order. Each op
//! appends a node holding its forward value and enough information to route
//! the incoming adjoint back to its parents. Graphs live for one training
//! step and are then dropped.

use std::cell::RefCell;
use std::rc::Rc;

use super::gemm::{gemm_acc, MatRef};
use super::params::{ParamId, ParamStore};
use super::{Array, AutodiffError};

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug)]
enum Op {
    Leaf,
    Param { store: u64, index: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Abs(usize),
    Sigmoid(usize),
    Softplus(usize),
    Ln(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    Sum(usize),
    SumAxis { x: usize, axis: usize },
    MaxAxis { x: usize, argmax: Vec<usize> },
    Dense { x: usize, w: usize, b: usize },
    Conv1d { x: usize, w: usize, b: usize, dilation: usize },
    ChannelNorm { x: usize, gain: usize, bias: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Reshape(usize),
    IndexAxis0 { x: usize, index: usize },
}

struct Node {
    value: Rc<Array>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Arena holding one forward pass and its backward records.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Tensor<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor(#{} {:?})", self.id, self.shape())
    }
}

/// Split `shape` around `axis` into (outer, dim, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array, op: Op, requires_grad: bool) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad, grad: None });
        Tensor { graph: self, id: nodes.len() - 1 }
    }

    fn push_rc(&self, value: Rc<Array>, op: Op, requires_grad: bool) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad, grad: None });
        Tensor { graph: self, id: nodes.len() - 1 }
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&self, value: Array) -> Tensor<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn input(&self, value: Array) -> Tensor<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Trainable parameter leaf; its gradient can be pulled back into the
    /// store with [`ParamStore::accumulate_grads`].
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Tensor<'_> {
        self.push_rc(store.value_rc(id), Op::Param { store: store.uid(), index: id.0 }, true)
    }

    /// Parameter used as a constant (frozen model).
    pub fn frozen(&self, store: &ParamStore, id: ParamId) -> Tensor<'_> {
        self.push_rc(store.value_rc(id), Op::Leaf, false)
    }

    /// Copy of `t`'s value cut off from the graph above it.
    pub fn detach<'g>(&'g self, t: Tensor<'g>) -> Tensor<'g> {
        let value = self.nodes.borrow()[t.id].value.clone();
        self.push_rc(value, Op::Leaf, false)
    }

    fn value(&self, id: usize) -> Rc<Array> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Gradient accumulated on a leaf, if any backward pass reached it.
    pub(crate) fn leaf_grad(&self, id: usize) -> Option<Vec<f64>> {
        self.nodes.borrow()[id].grad.clone()
    }

    /// (store uid, parameter index, gradient) for every parameter leaf with a gradient.
    pub(crate) fn param_grads(&self, store_uid: u64, mut f: impl FnMut(usize, &[f64])) {
        for node in self.nodes.borrow().iter() {
            if let (Op::Param { store, index }, Some(g)) = (&node.op, &node.grad) {
                if *store == store_uid {
                    f(*index, g);
                }
            }
        }
    }

    /// Reverse pass from a scalar `loss`. Gradients are *added* to the
    /// `grad` buffers of every reachable leaf that requires a gradient.
    pub fn backward(&self, loss: Tensor<'_>) -> Result<()> {
        if !std::ptr::eq(loss.graph, self) {
            return Err(AutodiffError::InvalidArgument {
                op: "backward",
                msg: "loss belongs to a different graph".into(),
            });
        }
        let loss_shape = loss.shape();
        if loss.value().len() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_shape));
        }
        let mut leaf_adjoints: Vec<(usize, Vec<f64>)> = Vec::new();
        {
            let nodes = self.nodes.borrow();
            if !nodes[loss.id].requires_grad {
                return Ok(());
            }
            let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.id).map(|_| None).collect();
            adj[loss.id] = Some(vec![1.0]);
            for id in (0..=loss.id).rev() {
                let Some(g) = adj[id].take() else { continue };
                let node = &nodes[id];
                match node.op {
                    Op::Leaf | Op::Param { .. } => leaf_adjoints.push((id, g)),
                    _ => propagate(&nodes, id, &g, &mut adj),
                }
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_adjoints {
            match &mut nodes[id].grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

/// Adjoint slot for `id`, allocated on first use. Returns `None` when the
/// node does not need a gradient.
fn slot<'a>(
    nodes: &[Node],
    adj: &'a mut [Option<Vec<f64>>],
    id: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(adj[id].get_or_insert_with(|| vec![0.0; len]))
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out = node.value.data();
    match &node.op {
        Op::Leaf | Op::Param { .. } => unreachable!(),
        Op::Add(a, b) => {
            for p in [*a, *b] {
                if let Some(s) = slot(nodes, adj, p) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(s) = slot(nodes, adj, *a) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
            if let Some(s) = slot(nodes, adj, *b) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s -= g);
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (nodes[*a].value.clone(), nodes[*b].value.clone());
            if let Some(s) = slot(nodes, adj, *a) {
                for ((s, g), y) in s.iter_mut().zip(g).zip(vb.data()) {
                    *s += g * y;
                }
            }
            if let Some(s) = slot(nodes, adj, *b) {
                for ((s, g), x) in s.iter_mut().zip(g).zip(va.data()) {
                    *s += g * x;
                }
            }
        }
        Op::Scale(a, k) => {
            if let Some(s) = slot(nodes, adj, *a) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += k * g);
            }
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            if let Some(s) = slot(nodes, adj, *a) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
        }
        Op::Abs(a) => {
            let x = nodes[*a].value.clone();
            if let Some(s) = slot(nodes, adj, *a) {
                for ((s, g), x) in s.iter_mut().zip(g).zip(x.data()) {
                    if *x > 0.0 {
                        *s += g;
                    } else if *x < 0.0 {
                        *s -= g;
                    }
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(s) = slot(nodes, adj, *a) {
                for ((s, g), y) in s.iter_mut().zip(g).zip(out) {
                    *s += g * y * (1.0 - y);
                }
            }
        }
        Op::Softplus(a) => {
            let x = nodes[*a].value.clone();
            if let Some(s) = slot(nodes, adj, *a) {
                for ((s, g), x) in s.iter_mut().zip(g).zip(x.data()) {
                    *s += g * sigmoid(*x);
                }
            }
        }
        Op::Ln(a) => {
            let x = nodes[*a].value.clone();
            if let Some(s) = slot(nodes, adj, *a) {
                for ((s, g), x) in s.iter_mut().zip(g).zip(x.data()) {
                    *s += g / x;
                }
            }
        }
        Op::Clamp { x, lo, hi } => {
            let xv = nodes[*x].value.clone();
            if let Some(s) = slot(nodes, adj, *x) {
                for ((s, g), x) in s.iter_mut().zip(g).zip(xv.data()) {
                    if *x >= *lo && *x <= *hi {
                        *s += g;
                    }
                }
            }
        }
        Op::Sum(a) => {
            if let Some(s) = slot(nodes, adj, *a) {
                s.iter_mut().for_each(|s| *s += g[0]);
            }
        }
        Op::SumAxis { x, axis } => {
            let (outer, dim, inner) = split_axis(nodes[*x].value.shape(), *axis);
            if let Some(s) = slot(nodes, adj, *x) {
                for o in 0..outer {
                    for d in 0..dim {
                        let dst = &mut s[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                        let src = &g[o * inner..(o + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(s, g)| *s += g);
                    }
                }
            }
        }
        Op::MaxAxis { x, argmax } => {
            if let Some(s) = slot(nodes, adj, *x) {
                for (j, &src) in argmax.iter().enumerate() {
                    s[src] += g[j];
                }
            }
        }
        Op::Dense { x, w, b } => {
            let xv = nodes[*x].value.clone();
            let wv = nodes[*w].value.clone();
            let (n_out, n_in) = (wv.shape()[0], wv.shape()[1]);
            let frames = xv.shape()[1];
            let gm = MatRef::dense(g, n_out, frames);
            if let Some(s) = slot(nodes, adj, *w) {
                gemm_acc(gm, MatRef::dense(xv.data(), n_in, frames).t(), s, 0, n_in, 1);
            }
            if let Some(s) = slot(nodes, adj, *b) {
                for (o, s) in s.iter_mut().enumerate() {
                    *s += g[o * frames..(o + 1) * frames].iter().sum::<f64>();
                }
            }
            if let Some(s) = slot(nodes, adj, *x) {
                gemm_acc(MatRef::dense(wv.data(), n_out, n_in).t(), gm, s, 0, frames, 1);
            }
        }
        Op::Conv1d { x, w, b, dilation } => {
            let xv = nodes[*x].value.clone();
            let wv = nodes[*w].value.clone();
            let (c_out, c_in, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
            let frames = xv.shape()[1];
            let half = (k / 2) as isize;
            let taps: Vec<(usize, isize, usize, usize)> = (0..k)
                .filter_map(|tap| conv_tap_range(tap, half, *dilation, frames))
                .collect();
            if let Some(s) = slot(nodes, adj, *w) {
                for &(tap, off, t0, t1) in &taps {
                    let n = t1 - t0;
                    let gview = MatRef {
                        data: g,
                        offset: t0,
                        rows: c_out,
                        cols: n,
                        row_stride: frames,
                        col_stride: 1,
                    };
                    let xt = MatRef {
                        data: xv.data(),
                        offset: (t0 as isize + off) as usize,
                        rows: c_in,
                        cols: n,
                        row_stride: frames,
                        col_stride: 1,
                    }
                    .t();
                    gemm_acc(gview, xt, s, tap, c_in * k, k);
                }
            }
            if let Some(s) = slot(nodes, adj, *b) {
                for (o, s) in s.iter_mut().enumerate() {
                    *s += g[o * frames..(o + 1) * frames].iter().sum::<f64>();
                }
            }
            if let Some(s) = slot(nodes, adj, *x) {
                for &(tap, off, t0, t1) in &taps {
                    let n = t1 - t0;
                    let wt = MatRef {
                        data: wv.data(),
                        offset: tap,
                        rows: c_out,
                        cols: c_in,
                        row_stride: c_in * k,
                        col_stride: k,
                    }
                    .t();
                    let gview = MatRef {
                        data: g,
                        offset: t0,
                        rows: c_out,
                        cols: n,
                        row_stride: frames,
                        col_stride: 1,
                    };
                    gemm_acc(wt, gview, s, (t0 as isize + off) as usize, frames, 1);
                }
            }
        }
        Op::ChannelNorm { x, gain, bias } => {
            let xv = nodes[*x].value.clone();
            let gv = nodes[*gain].value.clone();
            let (c, frames) = (xv.shape()[0], xv.shape()[1]);
            let (xhat, inv) = normalize_channels(&xv);
            if let Some(s) = slot(nodes, adj, *gain) {
                for (ch, s) in s.iter_mut().enumerate() {
                    let r = ch * frames..(ch + 1) * frames;
                    *s += g[r.clone()].iter().zip(&xhat[r]).map(|(g, h)| g * h).sum::<f64>();
                }
            }
            if let Some(s) = slot(nodes, adj, *bias) {
                for (ch, s) in s.iter_mut().enumerate() {
                    *s += g[ch * frames..(ch + 1) * frames].iter().sum::<f64>();
                }
            }
            if let Some(s) = slot(nodes, adj, *x) {
                let n = c as f64;
                for t in 0..frames {
                    let (mut mean_d, mut mean_dh) = (0.0, 0.0);
                    for ch in 0..c {
                        let d = g[ch * frames + t] * gv.data()[ch];
                        mean_d += d;
                        mean_dh += d * xhat[ch * frames + t];
                    }
                    mean_d /= n;
                    mean_dh /= n;
                    for ch in 0..c {
                        let k = ch * frames + t;
                        let d = g[k] * gv.data()[ch];
                        s[k] += inv[t] * (d - mean_d - xhat[k] * mean_dh);
                    }
                }
            }
        }
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = split_axis(node.value.shape(), *axis);
            let mut start = 0;
            for &p in parts {
                let dim = nodes[p].value.shape()[*axis];
                if let Some(s) = slot(nodes, adj, p) {
                    for o in 0..outer {
                        let src = &g[(o * total + start) * inner..(o * total + start + dim) * inner];
                        let dst = &mut s[o * dim * inner..(o + 1) * dim * inner];
                        dst.iter_mut().zip(src).for_each(|(s, g)| *s += g);
                    }
                }
                start += dim;
            }
        }
        Op::IndexAxis0 { x, index } => {
            let inner = g.len();
            if let Some(s) = slot(nodes, adj, *x) {
                s[index * inner..(index + 1) * inner]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(s, g)| *s += g);
            }
        }
    }
}

/// Variance floor of [`Tensor::channel_norm`].
pub const CHANNEL_NORM_EPS: f64 = 1e-5;

/// Per-frame standardization over the channel axis of `[C, T]`: the
/// normalized values and `1 / sqrt(var + eps)` per frame.
fn normalize_channels(x: &Array) -> (Vec<f64>, Vec<f64>) {
    let (c, frames) = (x.shape()[0], x.shape()[1]);
    let d = x.data();
    let mut xhat = vec![0.0; d.len()];
    let mut inv = vec![0.0; frames];
    for t in 0..frames {
        let mean = (0..c).map(|ch| d[ch * frames + t]).sum::<f64>() / c as f64;
        let var = (0..c).map(|ch| (d[ch * frames + t] - mean).powi(2)).sum::<f64>() / c as f64;
        inv[t] = 1.0 / (var + CHANNEL_NORM_EPS).sqrt();
        for ch in 0..c {
            xhat[ch * frames + t] = (d[ch * frames + t] - mean) * inv[t];
        }
    }
    (xhat, inv)
}

/// For kernel tap `tap`, the input offset and the output frame range
/// `[t0, t1)` whose shifted input frames fall inside `[0, frames)`.
fn conv_tap_range(
    tap: usize,
    half: isize,
    dilation: usize,
    frames: usize,
) -> Option<(usize, isize, usize, usize)> {
    let off = (tap as isize - half) * dilation as isize;
    let t0 = (-off).max(0) as usize;
    let t1 = (frames as isize - off).min(frames as isize);
    if t1 <= t0 as isize {
        return None;
    }
    Some((tap, off, t0, t1 as usize))
}

impl<'g> Tensor<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Array> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// Gradient accumulated on this leaf.
    pub fn grad(&self) -> Option<Array> {
        let g = self.graph.leaf_grad(self.id)?;
        Some(Array::new(&self.shape(), g).expect("gradient shape"))
    }

    fn same_graph(&self, op: &'static str, other: &Tensor<'g>) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(AutodiffError::InvalidArgument { op, msg: "operands from different graphs".into() })
        }
    }

    fn same_shape(&self, op: &'static str, other: &Tensor<'g>) -> Result<(Rc<Array>, Rc<Array>)> {
        self.same_graph(op, other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        Ok((a, b))
    }

    fn unary(self, f: impl Fn(f64) -> f64, op: Op) -> Tensor<'g> {
        let v = self.value().map(f);
        let rg = self.requires_grad();
        self.graph.push(v, op, rg)
    }

    fn binary(self, other: Tensor<'g>, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Tensor<'g>> {
        let (a, b) = self.same_shape(name, &other)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        let v = Array::new(a.shape(), data)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(v, op, rg))
    }

    pub fn add(self, other: Tensor<'g>) -> Result<Tensor<'g>> {
        self.binary(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Tensor<'g>) -> Result<Tensor<'g>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    /// Elementwise product.
    pub fn mul(self, other: Tensor<'g>) -> Result<Tensor<'g>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn scale(self, k: f64) -> Tensor<'g> {
        self.unary(|x| k * x, Op::Scale(self.id, k))
    }

    pub fn neg(self) -> Tensor<'g> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Tensor<'g> {
        self.unary(|x| x + c, Op::AddScalar(self.id))
    }

    pub fn abs(self) -> Tensor<'g> {
        self.unary(f64::abs, Op::Abs(self.id))
    }

    pub fn sigmoid(self) -> Tensor<'g> {
        self.unary(sigmoid, Op::Sigmoid(self.id))
    }

    /// Smooth rectifier `ln(1 + e^x)`.
    pub fn softplus(self) -> Tensor<'g> {
        self.unary(softplus, Op::Softplus(self.id))
    }

    /// Natural log. Inputs must be positive.
    pub fn ln(self) -> Result<Tensor<'g>> {
        let v = self.value();
        if let Some(bad) = v.data().iter().find(|x| **x <= 0.0) {
            return Err(AutodiffError::InvalidArgument {
                op: "ln",
                msg: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(f64::ln, Op::Ln(self.id)))
    }

    /// `ln(1 + x)` for `x > -1`.
    pub fn ln_1p(self) -> Result<Tensor<'g>> {
        self.add_scalar(1.0).ln()
    }

    /// Clamp into `[lo, hi]`; gradient is zero where clamping is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Tensor<'g> {
        self.unary(|x| x.clamp(lo, hi), Op::Clamp { x: self.id, lo, hi })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Tensor<'g> {
        let v = Array::scalar(self.value().sum());
        let rg = self.requires_grad();
        self.graph.push(v, Op::Sum(self.id), rg)
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<Vec<usize>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(AutodiffError::InvalidArgument {
                op,
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        Ok(shape)
    }

    /// Sum over one axis, which is removed from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Tensor<'g>> {
        let shape = self.check_axis("sum_axis", axis)?;
        let (outer, dim, inner) = split_axis(&shape, axis);
        let x = self.value();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let src = &x.data()[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                out[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let rg = self.requires_grad();
        Ok(self.graph.push(Array::new(&out_shape, out)?, Op::SumAxis { x: self.id, axis }, rg))
    }

    /// Maximum over one axis, which is removed from the shape. The gradient
    /// flows to the first maximal element.
    pub fn max_axis(self, axis: usize) -> Result<Tensor<'g>> {
        let shape = self.check_axis("max_axis", axis)?;
        let (outer, dim, inner) = split_axis(&shape, axis);
        if dim == 0 {
            return Err(AutodiffError::InvalidArgument { op: "max_axis", msg: "empty axis".into() });
        }
        let x = self.value();
        let xd = x.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = (o * dim) * inner + i;
                for d in 1..dim {
                    let idx = (o * dim + d) * inner + i;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out[o * inner + i] = xd[best];
                argmax[o * inner + i] = best;
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let rg = self.requires_grad();
        Ok(self.graph.push(Array::new(&out_shape, out)?, Op::MaxAxis { x: self.id, argmax }, rg))
    }

    /// Affine map over the leading (channel) axis: `w · x + b` for `x` of
    /// shape `[in, frames]`, `w` of shape `[out, in]` and `b` of shape `[out]`.
    pub fn dense(self, w: Tensor<'g>, b: Tensor<'g>) -> Result<Tensor<'g>> {
        self.same_graph("dense", &w)?;
        self.same_graph("dense", &b)?;
        let (xv, wv, bv) = (self.value(), w.value(), b.value());
        if xv.ndim() != 2 || wv.ndim() != 2 || bv.ndim() != 1 || wv.shape()[1] != xv.shape()[0] || bv.shape()[0] != wv.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "dense",
                lhs: xv.shape().to_vec(),
                rhs: [wv.shape(), bv.shape()].concat(),
            });
        }
        let (n_out, n_in, frames) = (wv.shape()[0], wv.shape()[1], xv.shape()[1]);
        let mut out = Vec::with_capacity(n_out * frames);
        for &bias in bv.data() {
            out.extend(std::iter::repeat(bias).take(frames));
        }
        gemm_acc(MatRef::dense(wv.data(), n_out, n_in), MatRef::dense(xv.data(), n_in, frames), &mut out, 0, frames, 1);
        let rg = self.requires_grad() || w.requires_grad() || b.requires_grad();
        Ok(self.graph.push(
            Array::new(&[n_out, frames], out)?,
            Op::Dense { x: self.id, w: w.id, b: b.id },
            rg,
        ))
    }

    /// Layer normalization of each frame of `[C, T]` across its channels,
    /// then a per-channel affine map with `gain` and `bias` of shape `[C]`.
    pub fn channel_norm(self, gain: Tensor<'g>, bias: Tensor<'g>) -> Result<Tensor<'g>> {
        self.same_graph("channel_norm", &gain)?;
        self.same_graph("channel_norm", &bias)?;
        let (xv, gv, bv) = (self.value(), gain.value(), bias.value());
        if xv.ndim() != 2 || gv.shape() != [xv.shape()[0]] || bv.shape() != [xv.shape()[0]] {
            return Err(AutodiffError::ShapeMismatch {
                op: "channel_norm",
                lhs: xv.shape().to_vec(),
                rhs: [gv.shape(), bv.shape()].concat(),
            });
        }
        let frames = xv.shape()[1];
        let (mut out, _) = normalize_channels(&xv);
        for (k, v) in out.iter_mut().enumerate() {
            let ch = k / frames.max(1);
            *v = *v * gv.data()[ch] + bv.data()[ch];
        }
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        Ok(self.graph.push(
            Array::new(xv.shape(), out)?,
            Op::ChannelNorm { x: self.id, gain: gain.id, bias: bias.id },
            rg,
        ))
    }

    /// Dilated 1-D convolution along frames with symmetric zero padding,
    /// so the output keeps the input's frame count. `x` is `[in, frames]`,
    /// `w` is `[out, in, kernel]` with odd `kernel`, `b` is `[out]`.
    pub fn conv1d(self, w: Tensor<'g>, b: Tensor<'g>, dilation: usize) -> Result<Tensor<'g>> {
        self.same_graph("conv1d", &w)?;
        self.same_graph("conv1d", &b)?;
        let (xv, wv, bv) = (self.value(), w.value(), b.value());
        let ok = xv.ndim() == 2
            && wv.ndim() == 3
            && bv.ndim() == 1
            && wv.shape()[1] == xv.shape()[0]
            && bv.shape()[0] == wv.shape()[0];
        if !ok {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv1d",
                lhs: xv.shape().to_vec(),
                rhs: [wv.shape(), bv.shape()].concat(),
            });
        }
        let (c_out, c_in, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if k % 2 == 0 || dilation == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "conv1d",
                msg: format!("kernel {k} must be odd and dilation {dilation} positive"),
            });
        }
        let frames = xv.shape()[1];
        let mut out = Vec::with_capacity(c_out * frames);
        for &bias in bv.data() {
            out.extend(std::iter::repeat(bias).take(frames));
        }
        let half = (k / 2) as isize;
        for tap in 0..k {
            let Some((tap, off, t0, t1)) = conv_tap_range(tap, half, dilation, frames) else { continue };
            let wk = MatRef { data: wv.data(), offset: tap, rows: c_out, cols: c_in, row_stride: c_in * k, col_stride: k };
            let xs = MatRef {
                data: xv.data(),
                offset: (t0 as isize + off) as usize,
                rows: c_in,
                cols: t1 - t0,
                row_stride: frames,
                col_stride: 1,
            };
            gemm_acc(wk, xs, &mut out, t0, frames, 1);
        }
        let rg = self.requires_grad() || w.requires_grad() || b.requires_grad();
        Ok(self.graph.push(
            Array::new(&[c_out, frames], out)?,
            Op::Conv1d { x: self.id, w: w.id, b: b.id, dilation },
            rg,
        ))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<'g>], axis: usize) -> Result<Tensor<'g>> {
        let Some(first) = parts.first() else {
            return Err(AutodiffError::InvalidArgument { op: "concat", msg: "no inputs".into() });
        };
        let base = first.check_axis("concat", axis)?;
        let mut values = Vec::with_capacity(parts.len());
        let mut total = 0;
        for p in parts {
            first.same_graph("concat", p)?;
            let v = p.value();
            let compatible = v.ndim() == base.len()
                && v.shape().iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch { op: "concat", lhs: base, rhs: v.shape().to_vec() });
            }
            total += v.shape()[axis];
            values.push(v);
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let dim = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * dim * inner..(o + 1) * dim * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(first.graph.push(
            Array::new(&shape, out)?,
            Op::Concat { parts: parts.iter().map(|p| p.id).collect(), axis },
            rg,
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Tensor<'g>> {
        let v = (*self.value()).clone().reshape(shape)?;
        let rg = self.requires_grad();
        Ok(self.graph.push(v, Op::Reshape(self.id), rg))
    }

    /// Sub-tensor at `index` along the leading axis.
    pub fn index_axis0(self, index: usize) -> Result<Tensor<'g>> {
        let v = self.value();
        if v.ndim() == 0 || index >= v.shape()[0] {
            return Err(AutodiffError::InvalidArgument {
                op: "index_axis0",
                msg: format!("index {index} out of range for shape {:?}", v.shape()),
            });
        }
        let rg = self.requires_grad();
        Ok(self.graph.push(v.index_axis0(index), Op::IndexAxis0 { x: self.id, index }, rg))
    }
}
