use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::{Array, AutodiffError, Graph};

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Rc<Array>,
    grad: Vec<f64>,
}

/// Named trainable parameters with gradient accumulators.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    params: Vec<Param>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: Rc::new((*p.value).clone()), grad: p.grad.clone() })
                .collect(),
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self { uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed), params: Vec::new() }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let grad = vec![0.0; value.len()];
        self.params.push(Param { name: name.into(), value: Rc::new(value), grad });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.params[id.0].value
    }

    pub(crate) fn value_rc(&self, id: ParamId) -> Rc<Array> {
        self.params[id.0].value.clone()
    }

    /// Mutable access; copies the buffer if a live graph still shares it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Array {
        Rc::make_mut(&mut self.params[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub(crate) fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Array, &[f64]) {
        let p = &mut self.params[id.0];
        (Rc::make_mut(&mut p.value), &p.grad)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Add the gradients that `graph` holds for this store's parameters.
    pub fn accumulate_grads(&mut self, graph: &Graph) {
        let uid = self.uid;
        let params = &mut self.params;
        graph.param_grads(uid, |index, g| {
            params[index].grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        });
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// (name, value) pairs in insertion order.
    pub fn named_values(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.params.iter().map(|p| (p.name.as_str(), &*p.value))
    }

    /// Replace values by name; every parameter must be present with a matching shape.
    pub fn load_named(&mut self, values: &[(String, Array)]) -> Result<(), AutodiffError> {
        for p in &mut self.params {
            let Some((_, v)) = values.iter().find(|(n, _)| *n == p.name) else {
                return Err(AutodiffError::InvalidArgument {
                    op: "load_named",
                    msg: format!("missing parameter {}", p.name),
                });
            };
            if v.shape() != p.value.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "load_named",
                    lhs: p.value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            p.value = Rc::new(v.clone());
        }
        Ok(())
    }
}
