//! Training objectives. All reductions are sums.
//!
//! Score-side losses take probabilities shaped `[I, ...]` whose first axis
//! is the instrument, so the same code serves rolls `[I, 88, T]` and
//! classifier activity `[I, T]`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, AutodiffError, Graph, Tensor};
use crate::score::HarmonicActivity;

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-4;

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Instrument marginal, transcriptor.
    pub alpha1: f64,
    /// Pitch marginal, transcriptor.
    pub beta1: f64,
    /// Clip-level mixture loss, separator.
    pub alpha2: f64,
    /// Harmonic mixture loss, separator.
    pub beta2: f64,
    /// Adversarial mixture loss, joint training.
    pub alpha3: f64,
    /// Adversarial transcription loss, joint training.
    pub beta3: f64,
    /// Apply class weights to the separator's score loss too.
    pub weight_separator_score: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha1: 0.03, beta1: 0.1, alpha2: 1.0, beta2: 0.1, alpha3: 0.2, beta3: 0.05, weight_separator_score: true }
    }
}

impl LossWeights {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let all = [self.alpha1, self.beta1, self.alpha2, self.beta2, self.alpha3, self.beta3];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(format!("loss weights must be finite and nonnegative: {all:?}"));
        }
        Ok(())
    }
}

/// Inverse activity rates normalized to mean 1: `w_i = hm / rate_i` with
/// `hm` the harmonic mean of the positive rates. Instruments that never play
/// get the largest weight among the others (or 1 if none play).
pub fn class_weights(rates: &[f64]) -> Vec<f64> {
    let positive: Vec<f64> = rates.iter().cloned().filter(|&r| r > 0.0).collect();
    let hm = positive.len() as f64 / positive.iter().map(|r| 1.0 / r).sum::<f64>();
    let raw: Vec<Option<f64>> = rates.iter().map(|&r| (r > 0.0).then(|| hm / r)).collect();
    let fallback = raw.iter().flatten().cloned().fold(f64::NAN, f64::max);
    let fallback = if fallback.is_nan() { 1.0 } else { fallback };
    raw.into_iter().map(|w| w.unwrap_or(fallback)).collect()
}

/// `H(y, p) = -y ln p - (1 - y) ln(1 - p)` with `p` clamped.
pub fn bce(y: f64, p: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

fn check_shape(op: &'static str, p: &[usize], y: &[usize]) -> Result<()> {
    if p != y {
        return Err(AutodiffError::ShapeMismatch { op, lhs: p.to_vec(), rhs: y.to_vec() });
    }
    Ok(())
}

fn check_weights(op: &'static str, shape: &[usize], w: &[f64]) -> Result<()> {
    if shape.first() != Some(&w.len()) {
        return Err(AutodiffError::InvalidArgument {
            op,
            msg: format!("{} class weights for shape {shape:?}", w.len()),
        });
    }
    Ok(())
}

/// `sum w[i] * H(y, p)` over all entries, `i` being the index on axis 0.
pub fn weighted_bce<'g>(p: Tensor<'g>, y: &Array, w: &[f64]) -> Result<Tensor<'g>> {
    let shape = p.shape();
    check_shape("weighted_bce", &shape, y.shape())?;
    check_weights("weighted_bce", &shape, w)?;
    let g = p.graph();
    let row = y.len() / w.len();
    let pos = Array::from_fn(&shape, |k| w[k / row] * y.data()[k]);
    let neg = Array::from_fn(&shape, |k| w[k / row] * (1.0 - y.data()[k]));
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let a = pc.ln()?.mul(g.constant(pos))?;
    let b = pc.neg().add_scalar(1.0).ln()?.mul(g.constant(neg))?;
    Ok(a.add(b)?.sum().neg())
}

/// Unweighted `sum H(y, p)`.
pub fn bce_sum<'g>(p: Tensor<'g>, y: &Array) -> Result<Tensor<'g>> {
    let w = vec![1.0; p.shape().first().copied().unwrap_or(1)];
    let shape = p.shape();
    if shape.is_empty() {
        return weighted_bce(p.reshape(&[1])?, &y.clone().reshape(&[1])?, &w);
    }
    weighted_bce(p, y, &w)
}

#[derive(Clone, Copy, Debug)]
pub struct TranscriptionLosses<'g> {
    pub score: Tensor<'g>,
    pub pitch: Tensor<'g>,
    pub inst: Tensor<'g>,
    /// `score + alpha1 * inst + beta1 * pitch`.
    pub total: Tensor<'g>,
}

fn max_marginals(y: &Array) -> Result<(Array, Array)> {
    crate::score::marginalize(y).map_err(|e| AutodiffError::InvalidArgument { op: "marginalize", msg: e.to_string() })
}

/// Score, pitch-marginal and instrument-marginal losses for rolls `[I, 88, T]`.
pub fn transcription_losses<'g>(
    p: Tensor<'g>,
    y: &Array,
    class_weights: &[f64],
    weights: &LossWeights,
) -> Result<TranscriptionLosses<'g>> {
    check_shape("transcription_losses", &p.shape(), y.shape())?;
    if y.ndim() != 3 {
        return Err(AutodiffError::InvalidArgument {
            op: "transcription_losses",
            msg: format!("expected [I, 88, T], got {:?}", y.shape()),
        });
    }
    let score = weighted_bce(p, y, class_weights)?;
    let (y_pitch, y_inst) = max_marginals(y)?;
    let pitch = bce_sum(p.max_axis(0)?, &y_pitch)?;
    let inst = bce_sum(p.max_axis(1)?, &y_inst)?;
    let total = score.add(inst.scale(weights.alpha1))?.add(pitch.scale(weights.beta1))?;
    Ok(TranscriptionLosses { score, pitch, inst, total })
}

/// Target with only instrument `i`'s row of `y` kept.
pub fn target_only(y: &Array, i: usize) -> Array {
    let row = y.len() / y.shape()[0];
    Array::from_fn(y.shape(), |k| if k / row == i { y.data()[k] } else { 0.0 })
}

/// Target with instrument `i`'s row of `y` zeroed.
pub fn target_without(y: &Array, i: usize) -> Array {
    let row = y.len() / y.shape()[0];
    Array::from_fn(y.shape(), |k| if k / row == i { 0.0 } else { y.data()[k] })
}

fn per_source<'g>(
    op: &'static str,
    ps: &[Tensor<'g>],
    y: &Array,
    w: &[f64],
    target: impl Fn(&Array, usize) -> Array,
) -> Result<Tensor<'g>> {
    if ps.len() != y.shape().first().copied().unwrap_or(0) {
        return Err(AutodiffError::InvalidArgument {
            op,
            msg: format!("{} transcriptions for {:?} targets", ps.len(), y.shape()),
        });
    }
    let mut total: Option<Tensor<'g>> = None;
    for (i, p) in ps.iter().enumerate() {
        let l = weighted_bce(*p, &target(y, i), w)?;
        total = Some(match total {
            Some(t) => t.add(l)?,
            None => l,
        });
    }
    Ok(total.expect("at least one source"))
}

/// For each separated source `i`, the transcription `ps[i]` should show
/// instrument `i`'s notes and nothing for any other instrument.
pub fn separator_score_loss<'g>(ps: &[Tensor<'g>], y: &Array, class_weights: &[f64]) -> Result<Tensor<'g>> {
    per_source("separator_score_loss", ps, y, class_weights, target_only)
}

/// For each separated source `i` (detached), the transcriptor should not
/// recognize instrument `i` but should recognize every other instrument.
pub fn adversarial_transcription_loss<'g>(ps: &[Tensor<'g>], y: &Array, class_weights: &[f64]) -> Result<Tensor<'g>> {
    per_source("adversarial_transcription_loss", ps, y, class_weights, target_without)
}

/// Negated weighted score loss of the transcriptor on a remix.
pub fn adversarial_mixture_loss<'g>(p_remix: Tensor<'g>, y_remix: &Array, class_weights: &[f64]) -> Result<Tensor<'g>> {
    Ok(weighted_bce(p_remix, y_remix, class_weights)?.neg())
}

/// `sum |X - sum_{active} S_i| + sum_{inactive} |S_i|` with `active` a
/// 0/1 array shaped like `s`.
fn masked_mixture_loss<'g>(x: &Array, s: Tensor<'g>, active: Array) -> Result<Tensor<'g>> {
    let shape = s.shape();
    if shape.len() != 3 {
        return Err(AutodiffError::InvalidArgument {
            op: "mixture_loss",
            msg: format!("sources must be [I, F, T], got {shape:?}"),
        });
    }
    check_shape("mixture_loss", &shape[1..], x.shape())?;
    let g: &Graph = s.graph();
    let inactive = active.map(|a| 1.0 - a);
    let sum_active = s.mul(g.constant(active))?.sum_axis(0)?;
    let residual = g.constant(x.clone()).sub(sum_active)?.abs().sum();
    let leak = s.mul(g.constant(inactive))?.abs().sum();
    residual.add(leak)
}

/// Clip-level mixture loss: sources of instruments playing anywhere in the
/// clip should add up to the mixture, the others should be silent.
pub fn clip_mixture_loss<'g>(x: &Array, s: Tensor<'g>, clip_active: &[bool]) -> Result<Tensor<'g>> {
    let shape = s.shape();
    if shape.first() != Some(&clip_active.len()) {
        return Err(AutodiffError::InvalidArgument {
            op: "clip_mixture_loss",
            msg: format!("{} activity flags for sources {shape:?}", clip_active.len()),
        });
    }
    let per = shape.iter().skip(1).product::<usize>();
    let active = Array::from_fn(&shape, |k| clip_active[k / per] as u8 as f64);
    masked_mixture_loss(x, s, active)
}

/// Mixture loss with the active set chosen per time-frequency bin from the
/// score's harmonics.
pub fn harmonic_mixture_loss<'g>(x: &Array, s: Tensor<'g>, activity: &HarmonicActivity) -> Result<Tensor<'g>> {
    let shape = s.shape();
    let expected = [activity.instruments(), activity.bins(), activity.frames()];
    check_shape("harmonic_mixture_loss", &shape, &expected)?;
    let active = Array::new(&shape, activity.active().iter().map(|&a| a as u8 as f64).collect())?;
    masked_mixture_loss(x, s, active)
}

/// `score + alpha2 * c_mix + beta2 * h_mix`.
pub fn separator_loss<'g>(score: Tensor<'g>, c_mix: Tensor<'g>, h_mix: Tensor<'g>, w: &LossWeights) -> Result<Tensor<'g>> {
    score.add(c_mix.scale(w.alpha2))?.add(h_mix.scale(w.beta2))
}

/// `transcription + alpha3 * aml + beta3 * atl`.
pub fn joint_transcriptor_loss<'g>(
    transcription: Tensor<'g>,
    aml: Tensor<'g>,
    atl: Tensor<'g>,
    w: &LossWeights,
) -> Result<Tensor<'g>> {
    transcription.add(aml.scale(w.alpha3))?.add(atl.scale(w.beta3))
}
