//! Temporal convolutional network and its three heads.
//!
//! The network sees `ln(1 + X)` of a magnitude spectrogram `X` of shape
//! `[1025, T]`, projects it to `channels` with a per-frame dense layer and
//! runs a stack of dilated residual blocks:
//!
//! ```text
//! h <- h + pointwise(norm(softplus(conv_k3_dilated(h))))
//! ```
//!
//! where `norm` standardizes each frame across channels (optional, also
//! applied after the input layer).
//!
//! with dilation `2^b` for block `b` of every repeat. Heads are per-frame
//! dense layers followed by a sigmoid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, AutodiffError, Checkpoint, CheckpointError, Graph, ParamId, ParamStore, Tensor};
use crate::dsp::NUM_BINS;
use crate::score::NUM_NOTES;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("expected input with {expected} frequency bins, got shape {got:?}")]
    InputShape { expected: usize, got: Vec<usize> },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongKind { expected: ModelKind, found: ModelKind },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcnConfig {
    pub repeats: usize,
    pub blocks_per_repeat: usize,
    pub channels: usize,
    pub kernel: usize,
    /// Width of a hidden softplus layer in the output head; 0 for a single
    /// linear layer.
    pub head_hidden: usize,
    /// Layer-normalize every frame across channels after the input layer
    /// and inside each block.
    pub channel_norm: bool,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self { repeats: 2, blocks_per_repeat: 6, channels: 64, kernel: 3, head_hidden: 0, channel_norm: true }
    }
}

impl TcnConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.kernel != 3 {
            return Err(NnError::Config(format!("kernel must be 3, got {}", self.kernel)));
        }
        if self.repeats == 0 || self.blocks_per_repeat == 0 || self.channels == 0 {
            return Err(NnError::Config("repeats, blocks_per_repeat and channels must be positive".into()));
        }
        if self.blocks_per_repeat > 16 {
            return Err(NnError::Config("blocks_per_repeat above 16".into()));
        }
        Ok(())
    }

    pub fn dilations(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.repeats).flat_map(move |_| (0..self.blocks_per_repeat).map(|b| 1 << b))
    }

    /// Frames of input that can influence one output frame.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.repeats * ((1 << self.blocks_per_repeat) - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Mixture -> per-instrument piano rolls `[I, 88, T]`.
    Transcriptor,
    /// Mixture -> per-instrument masks `[I, 1025, T]`.
    Separator,
    /// Mixture -> per-instrument activity `[I, T]`.
    Classifier,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Transcriptor => "transcriptor",
            ModelKind::Separator => "separator",
            ModelKind::Classifier => "classifier",
        })
    }
}

impl ModelKind {
    fn rows_per_instrument(self) -> usize {
        match self {
            ModelKind::Transcriptor => NUM_NOTES,
            ModelKind::Separator => NUM_BINS,
            ModelKind::Classifier => 1,
        }
    }

    fn output_bias(self) -> f64 {
        match self {
            ModelKind::Separator => 0.0,
            _ => -2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    kind: ModelKind,
    instruments: Vec<String>,
    tcn: TcnConfig,
}

#[derive(Clone, Debug)]
struct Block {
    conv_w: ParamId,
    conv_b: ParamId,
    mix_w: ParamId,
    mix_b: ParamId,
    norm: Option<(ParamId, ParamId)>,
    dilation: usize,
}

/// A TCN model; parameters live in [`Model::params`].
#[derive(Clone, Debug)]
pub struct Model {
    kind: ModelKind,
    instruments: Vec<String>,
    tcn: TcnConfig,
    pub params: ParamStore,
    in_w: ParamId,
    in_b: ParamId,
    in_norm: Option<(ParamId, ParamId)>,
    blocks: Vec<Block>,
    hidden: Option<(ParamId, ParamId)>,
    out_w: ParamId,
    out_b: ParamId,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Array {
    let limit = (1.0 / fan_in as f64).sqrt();
    Array::from_fn(shape, |_| rng.gen_range(-limit..limit))
}

impl Model {
    /// Fan-in scaled uniform weights, zero hidden biases and an output bias
    /// of -2 (0 for separator masks).
    pub fn new(kind: ModelKind, instruments: Vec<String>, tcn: TcnConfig, seed: u64) -> Result<Self, NnError> {
        tcn.validate()?;
        if instruments.is_empty() {
            return Err(NnError::Config("at least one instrument required".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = tcn.channels;
        let k = tcn.kernel;
        let mut params = ParamStore::new();
        let in_w = params.add("input.weight", uniform(&mut rng, &[c, NUM_BINS], NUM_BINS));
        let in_b = params.add("input.bias", Array::zeros(&[c]));
        let norm = |params: &mut ParamStore, name: &str| {
            tcn.channel_norm.then(|| {
                let gain = params.add(format!("{name}.norm.gain"), Array::filled(&[c], 1.0));
                (gain, params.add(format!("{name}.norm.bias"), Array::zeros(&[c])))
            })
        };
        let in_norm = norm(&mut params, "input");
        let blocks = tcn
            .dilations()
            .enumerate()
            .map(|(n, dilation)| Block {
                conv_w: params.add(format!("block{n}.conv.weight"), uniform(&mut rng, &[c, c, k], c * k)),
                conv_b: params.add(format!("block{n}.conv.bias"), Array::zeros(&[c])),
                mix_w: params.add(format!("block{n}.mix.weight"), uniform(&mut rng, &[c, c], c)),
                mix_b: params.add(format!("block{n}.mix.bias"), Array::zeros(&[c])),
                norm: norm(&mut params, &format!("block{n}")),
                dilation,
            })
            .collect();
        let hidden = (tcn.head_hidden > 0).then(|| {
            let w = params.add("hidden.weight", uniform(&mut rng, &[tcn.head_hidden, c], c));
            (w, params.add("hidden.bias", Array::zeros(&[tcn.head_hidden])))
        });
        let head_in = if tcn.head_hidden > 0 { tcn.head_hidden } else { c };
        let out = instruments.len() * kind.rows_per_instrument();
        let out_w = params.add("output.weight", uniform(&mut rng, &[out, head_in], head_in));
        let out_b = params.add("output.bias", Array::filled(&[out], kind.output_bias()));
        Ok(Self { kind, instruments, tcn, params, in_w, in_b, in_norm, blocks, hidden, out_w, out_b })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn tcn(&self) -> &TcnConfig {
        &self.tcn
    }

    pub fn instruments(&self) -> &[String] {
        &self.instruments
    }

    pub fn num_instruments(&self) -> usize {
        self.instruments.len()
    }

    /// Sets the output layer to zero, so every output is 0.5.
    pub fn zero_output_layer(&mut self) {
        self.params.value_mut(self.out_w).data_mut().fill(0.0);
        self.params.value_mut(self.out_b).data_mut().fill(0.0);
    }

    /// Per-instrument outputs for magnitude `x` of shape `[1025, T]`: rolls
    /// `[I, 88, T]`, masks `[I, 1025, T]` or activity `[I, T]`, depending
    /// on the kind. With `trainable` false the parameters enter the graph
    /// as constants.
    pub fn forward<'g>(&self, g: &'g Graph, x: Tensor<'g>, trainable: bool) -> Result<Tensor<'g>, NnError> {
        let shape = x.shape();
        if shape.len() != 2 || shape[0] != NUM_BINS {
            return Err(NnError::InputShape { expected: NUM_BINS, got: shape });
        }
        let t = shape[1];
        let p = |id| if trainable { g.param(&self.params, id) } else { g.frozen(&self.params, id) };
        let norm = |h: Tensor<'g>, n: Option<(ParamId, ParamId)>| match n {
            Some((gain, bias)) => h.channel_norm(p(gain), p(bias)),
            None => Ok(h),
        };
        let mut h = norm(x.ln_1p()?.dense(p(self.in_w), p(self.in_b))?, self.in_norm)?;
        for b in &self.blocks {
            let inner = norm(h.conv1d(p(b.conv_w), p(b.conv_b), b.dilation)?.softplus(), b.norm)?;
            h = h.add(inner.dense(p(b.mix_w), p(b.mix_b))?)?;
        }
        if let Some((w, b)) = self.hidden {
            h = h.dense(p(w), p(b))?.softplus();
        }
        let y = h.dense(p(self.out_w), p(self.out_b))?.sigmoid();
        let i = self.num_instruments();
        Ok(match self.kind {
            ModelKind::Classifier => y,
            kind => y.reshape(&[i, kind.rows_per_instrument(), t])?,
        })
    }

    /// Masks `[I, F, T]` and masked sources `M_i * X` for a separator.
    pub fn separate<'g>(
        &self,
        g: &'g Graph,
        x: Tensor<'g>,
        trainable: bool,
    ) -> Result<(Tensor<'g>, Tensor<'g>), NnError> {
        let masks = self.forward(g, x, trainable)?;
        let shape = x.shape();
        let flat = x.reshape(&[1, shape[0], shape[1]])?;
        let tiled = Tensor::concat(&vec![flat; self.num_instruments()], 0)?;
        let sources = masks.mul(tiled)?;
        Ok((masks, sources))
    }

    /// Forward pass outside any training graph.
    pub fn predict(&self, x: &Array) -> Result<Array, NnError> {
        let g = Graph::new();
        let y = self.forward(&g, g.constant(x.clone()), false)?;
        Ok(y.value().as_ref().clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = ModelMeta { kind: self.kind, instruments: self.instruments.clone(), tcn: self.tcn };
        Checkpoint::from_store(serde_json::to_value(meta).expect("meta serializes"), &self.params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, NnError> {
        let meta: ModelMeta = serde_json::from_value(ckpt.meta.clone())
            .map_err(CheckpointError::Header)?;
        let mut model = Model::new(meta.kind, meta.instruments, meta.tcn, 0)?;
        ckpt.apply_to(&mut model.params)?;
        Ok(model)
    }

    /// Loads a checkpoint and checks that it holds a model of `kind`.
    pub fn load(path: &std::path::Path, kind: ModelKind) -> Result<Self, NnError> {
        let model = Self::from_checkpoint(&Checkpoint::load(path)?)?;
        if model.kind != kind {
            return Err(NnError::WrongKind { expected: kind, found: model.kind });
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NnError> {
        Ok(self.to_checkpoint().save(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("inst{i}")).collect()
    }

    fn small() -> TcnConfig {
        TcnConfig { repeats: 1, blocks_per_repeat: 2, channels: 4, kernel: 3, head_hidden: 0, channel_norm: true }
    }

    #[test]
    fn receptive_fields() {
        assert_eq!(TcnConfig { repeats: 3, blocks_per_repeat: 8, channels: 8, kernel: 3, head_hidden: 0, channel_norm: true }.receptive_field(), 1531);
        assert_eq!(TcnConfig::default().receptive_field(), 253);
    }

    #[test]
    fn output_shapes() {
        let x = Array::filled(&[NUM_BINS, 7], 0.3);
        for (kind, shape) in [
            (ModelKind::Transcriptor, vec![2, 88, 7]),
            (ModelKind::Separator, vec![2, NUM_BINS, 7]),
            (ModelKind::Classifier, vec![2, 7]),
        ] {
            let m = Model::new(kind, names(2), small(), 1).unwrap();
            let y = m.predict(&x).unwrap();
            assert_eq!(y.shape(), &shape[..]);
            assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn zero_head_gives_one_half() {
        let mut m = Model::new(ModelKind::Transcriptor, names(3), small(), 2).unwrap();
        m.zero_output_layer();
        let y = m.predict(&Array::zeros(&[NUM_BINS, 5])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn wrong_bins_rejected() {
        let m = Model::new(ModelKind::Classifier, names(1), small(), 2).unwrap();
        assert!(matches!(m.predict(&Array::zeros(&[1024, 5])), Err(NnError::InputShape { .. })));
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = TcnConfig { kernel: 5, ..small() };
        assert!(Model::new(ModelKind::Classifier, names(1), cfg, 0).is_err());
        assert!(Model::new(ModelKind::Classifier, vec![], small(), 0).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = Model::new(ModelKind::Separator, names(2), small(), 3).unwrap();
        let back = Model::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.params.fingerprint(), m.params.fingerprint());
        assert_eq!(back.instruments(), m.instruments());
        assert_eq!(back.kind(), ModelKind::Separator);
    }
}
