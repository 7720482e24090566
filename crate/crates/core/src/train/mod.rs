//! Training protocol.
//!
//! 1. Transcriptor on mixtures and their scores.
//! 2. Separator, with the step-1 transcriptor as a frozen critic of each
//!    separated source plus the clip-level and harmonic mixture losses.
//! 3. Both together: each batch updates the separator first, then the
//!    transcriptor, which additionally sees remixes of separated sources
//!    and the separated sources themselves as adversarial inputs.
//!
//! The classifier baseline mirrors steps 1 and 2 with an instrument
//! activity classifier in place of the transcriptor.
//!
//! Each run draws all randomness from one ChaCha stream seeded by
//! [`TrainConfig::seed`], and every step starts a fresh optimizer.

mod remix;
mod schedule;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Array, AutodiffError, Graph, ParamStore, Tensor};
use crate::eval::{self, EvalError};
use crate::losses::{
    adversarial_mixture_loss, adversarial_transcription_loss, class_weights, clip_mixture_loss,
    harmonic_mixture_loss, joint_transcriptor_loss, separator_loss, separator_score_loss, transcription_losses,
    weighted_bce, LossWeights,
};
use crate::nn::{Model, ModelKind, NnError, TcnConfig};
use crate::score::{build_with_table, harmonic_bin_table, marginalize, HarmonicConfig, ScoreError};
use crate::synth::{ClipFeatures, Dataset};

pub use remix::{remix_picks, remix_sample, RemixBatch};
pub use schedule::{Observation, Plateau};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("training log: {0}")]
    Log(#[from] std::io::Error),
    #[error("{what} became non-finite in epoch {epoch}")]
    Diverged { what: &'static str, epoch: usize },
    #[error("frozen critic changed during training")]
    CriticChanged,
}

type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Decoupled weight decay applied by the optimizer.
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub weights: LossWeights,
    /// Multiplies both mixture losses; the default expresses them in units
    /// of the analysis window's sum, so a unit sinusoid peaks near 0.5.
    pub mixture_loss_scale: f64,
    pub use_c_mix: bool,
    pub use_h_mix: bool,
    pub use_aml: bool,
    pub use_atl: bool,
    /// Never remix a sample with its own separated sources.
    pub exclude_self: bool,
    /// Backbone of the transcriptor and classifier.
    pub tcn: TcnConfig,
    /// Backbone of the separator.
    pub separator_tcn: TcnConfig,
    pub harmonic: HarmonicConfig,
    /// Probability threshold for frame and note metrics.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 4,
            lr: 0.001,
            weight_decay: 0.1,
            lr_decay: 0.5,
            plateau_patience: 2,
            early_stop_patience: 10,
            max_epochs: 50,
            weights: LossWeights::default(),
            mixture_loss_scale: 1.0 / 1024.0,
            use_c_mix: true,
            use_h_mix: true,
            use_aml: true,
            use_atl: true,
            exclude_self: false,
            tcn: TcnConfig::default(),
            separator_tcn: TcnConfig::default(),
            harmonic: HarmonicConfig::default(),
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr must be positive and lr_decay in (0, 1]");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 || self.max_epochs == 0 {
            return bad("patience values and max_epochs must be positive");
        }
        if !(self.mixture_loss_scale > 0.0) || !self.mixture_loss_scale.is_finite() {
            return bad("mixture_loss_scale must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        self.weights.validate().map_err(TrainError::Config)?;
        self.tcn.validate()?;
        self.separator_tcn.validate()?;
        self.harmonic.validate()?;
        Ok(())
    }

    /// Loss weights with disabled terms set to zero.
    pub fn effective_weights(&self) -> LossWeights {
        let w = &self.weights;
        LossWeights {
            alpha2: if self.use_c_mix { w.alpha2 } else { 0.0 },
            beta2: if self.use_h_mix { w.beta2 } else { 0.0 },
            alpha3: if self.use_aml { w.alpha3 } else { 0.0 },
            beta3: if self.use_atl { w.beta3 } else { 0.0 },
            ..w.clone()
        }
    }
}

/// Training and validation clips plus the instrument names.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub instruments: Vec<String>,
    pub train: Dataset,
    pub validation: Dataset,
}

impl TrainData {
    fn check(&self) -> Result<()> {
        if self.train.is_empty() || self.validation.is_empty() {
            return Err(TrainError::Config("training and validation sets must be non-empty".into()));
        }
        for d in [&self.train, &self.validation] {
            if d.instruments() != self.instruments.len() {
                return Err(TrainError::Config(format!(
                    "rolls have {} instruments, names list {}",
                    d.instruments(),
                    self.instruments.len()
                )));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub step: String,
    pub role: ModelKind,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_si_sdr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_si_sdr_gain: Option<f64>,
    pub seconds: f64,
}

/// Collects epoch records, optionally mirroring them as JSON lines and
/// human-readable progress.
#[derive(Default)]
pub struct TrainLog {
    writer: Option<Box<dyn Write>>,
    progress: bool,
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn new(writer: Option<Box<dyn Write>>, progress: bool) -> Self {
        Self { writer, progress, records: Vec::new() }
    }

    fn push(&mut self, r: EpochRecord) -> Result<()> {
        if let Some(w) = &mut self.writer {
            serde_json::to_writer(&mut *w, &r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        if self.progress {
            let mut line = format!(
                "[step {} {}] epoch {:>3} lr {:.2e} train {:.4} val {:.4}",
                r.step, r.role, r.epoch, r.lr, r.train_loss, r.val_loss
            );
            if let Some(f) = r.val_f1 {
                line += &format!(" f1 {f:.3}");
            }
            if let Some(s) = r.val_si_sdr {
                line += &format!(" si-sdr {s:.2} dB");
            }
            if let Some(d) = r.val_si_sdr_gain {
                line += &format!(" ({d:+.2} over mixture)");
            }
            if r.improved {
                line += " *";
            }
            eprintln!("{line} ({:.1}s)", r.seconds);
        }
        self.records.push(r);
        Ok(())
    }
}

pub struct StepOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model,
    pub best_val_loss: f64,
    pub epochs: usize,
}

pub struct JointOutcome {
    pub transcriptor: Model,
    pub separator: Model,
    pub transcriptor_best: f64,
    pub separator_best: f64,
    pub epochs: usize,
}

fn adam(cfg: &TrainConfig) -> Adam {
    let mut a = Adam::new(cfg.lr);
    a.weight_decay = cfg.weight_decay;
    a
}

fn batches(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(size).map(<[usize]>::to_vec).collect()
}

fn check_finite(v: f64, what: &'static str, epoch: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TrainError::Diverged { what, epoch })
    }
}

/// Critic targets: rolls for a transcriptor, instrument activity for a classifier.
fn critic_target(kind: ModelKind, clip: &ClipFeatures) -> Array {
    let y = clip.roll.to_array();
    match kind {
        ModelKind::Classifier => marginalize(&y).expect("rolls are 3-d").1,
        _ => y,
    }
}

/// Per-clip loss of a transcriptor or classifier on its own mixture.
fn scorer_loss<'g>(
    g: &'g Graph,
    model: &Model,
    clip: &ClipFeatures,
    cw: &[f64],
    w: &LossWeights,
    trainable: bool,
) -> Result<Tensor<'g>> {
    let p = model.forward(g, g.constant(clip.magnitude.clone()), trainable)?;
    let y = critic_target(model.kind(), clip);
    Ok(match model.kind() {
        ModelKind::Transcriptor => transcription_losses(p, &y, cw, w)?.total,
        _ => weighted_bce(p, &y, cw)?,
    })
}

struct SeparatorCtx<'a> {
    critic: &'a Model,
    score_weights: Vec<f64>,
    weights: LossWeights,
    bin_table: Vec<Vec<usize>>,
}

/// Separator objective on one clip: critic score loss on every separated
/// source plus the enabled mixture losses.
fn separator_clip_loss<'g>(
    g: &'g Graph,
    separator: &Model,
    clip: &ClipFeatures,
    ctx: &SeparatorCtx<'_>,
    trainable: bool,
) -> Result<Tensor<'g>> {
    let (_, s) = separator.separate(g, g.constant(clip.magnitude.clone()), trainable)?;
    let ps = (0..separator.num_instruments())
        .map(|i| Ok(ctx.critic.forward(g, s.index_axis0(i)?, false)?))
        .collect::<Result<Vec<_>>>()?;
    let score = separator_score_loss(&ps, &critic_target(ctx.critic.kind(), clip), &ctx.score_weights)?;
    let zero = || g.constant(Array::scalar(0.0));
    let clip_active: Vec<bool> = (0..clip.roll.instruments()).map(|i| clip.roll.instrument_active(i)).collect();
    let c_mix = if ctx.weights.alpha2 > 0.0 { clip_mixture_loss(&clip.magnitude, s, &clip_active)? } else { zero() };
    let h_mix = if ctx.weights.beta2 > 0.0 {
        harmonic_mixture_loss(&clip.magnitude, s, &build_with_table(&clip.roll, &ctx.bin_table))?
    } else {
        zero()
    };
    Ok(separator_loss(score, c_mix, h_mix, &ctx.weights)?)
}

/// Mean per-clip value of `loss` over `data` without parameter gradients.
fn mean_loss(data: &Dataset, mut loss: impl FnMut(&Graph, &ClipFeatures) -> Result<f64>) -> Result<f64> {
    let mut total = 0.0;
    for clip in &data.clips {
        let g = Graph::new();
        total += loss(&g, clip)?;
    }
    Ok(total / data.len() as f64)
}

/// One optimizer step on `store` from the mean of per-clip losses.
fn batch_update(
    store_of: &mut Model,
    adam: &mut Adam,
    batch: &[usize],
    mut loss: impl FnMut(&Graph, &Model, usize) -> Result<f64>,
) -> Result<f64> {
    store_of.params.zero_grad();
    let mut total = 0.0;
    for &idx in batch {
        let g = Graph::new();
        total += loss(&g, store_of, idx)?;
        store_of.params.accumulate_grads(&g);
    }
    adam.update(&mut store_of.params);
    Ok(total / batch.len() as f64)
}

fn backward_scaled(g: &Graph, loss: Tensor<'_>, scale: f64) -> Result<f64> {
    let v = loss.item();
    g.backward(loss.scale(scale))?;
    Ok(v)
}

fn record(step: &str, role: ModelKind, epoch: usize, lr: f64, train: f64, val: f64, improved: bool, t0: Instant) -> EpochRecord {
    EpochRecord {
        step: step.into(),
        role,
        epoch,
        lr,
        train_loss: train,
        val_loss: val,
        improved,
        val_f1: None,
        val_si_sdr: None,
        val_si_sdr_gain: None,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn train_scorer(data: &TrainData, cfg: &TrainConfig, kind: ModelKind, step: &str, log: &mut TrainLog) -> Result<StepOutcome> {
    cfg.validate()?;
    data.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(kind, data.instruments.clone(), cfg.tcn, rng.gen())?;
    let cw = class_weights(&data.train.activity_rates());
    let w = cfg.effective_weights();
    let mut sched = Plateau::new(cfg.lr, cfg.lr_decay, cfg.plateau_patience, cfg.early_stop_patience);
    let mut adam = adam(cfg);
    let mut best: ParamStore = model.params.clone();
    let mut epochs = 0;
    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        epochs = epoch;
        let mut train = 0.0;
        for batch in batches(&mut rng, data.train.len(), cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            train += batch_update(&mut model, &mut adam, &batch, |g, m, idx| {
                backward_scaled(g, scorer_loss(g, m, &data.train.clips[idx], &cw, &w, true)?, scale)
            })? * batch.len() as f64;
        }
        train = check_finite(train / data.train.len() as f64, "training loss", epoch)?;
        let val = mean_loss(&data.validation, |g, c| Ok(scorer_loss(g, &model, c, &cw, &w, false)?.item()))?;
        let val = check_finite(val, "validation loss", epoch)?;
        let lr = sched.lr();
        let obs = sched.observe(val);
        if obs.improved {
            best = model.params.clone();
        }
        let mut r = record(step, kind, epoch, lr, train, val, obs.improved, t0);
        r.val_f1 = Some(match kind {
            ModelKind::Transcriptor => eval::frame_f1(&model, &data.validation, cfg.threshold)?,
            _ => eval::activity_f1(&model, &data.validation, cfg.threshold)?,
        });
        r.seconds = t0.elapsed().as_secs_f64();
        log.push(r)?;
        adam.lr = sched.lr();
        if obs.stop {
            break;
        }
    }
    model.params = best;
    Ok(StepOutcome { model, best_val_loss: sched.best(), epochs })
}

/// Step 1: transcriptor from mixtures and scores.
pub fn run_step1(data: &TrainData, cfg: &TrainConfig, log: &mut TrainLog) -> Result<StepOutcome> {
    train_scorer(data, cfg, ModelKind::Transcriptor, "1", log)
}

/// Baseline step 1: frame-level instrument activity classifier.
pub fn run_classifier(data: &TrainData, cfg: &TrainConfig, log: &mut TrainLog) -> Result<StepOutcome> {
    train_scorer(data, cfg, ModelKind::Classifier, "baseline-1", log)
}

fn separator_ctx<'a>(critic: &'a Model, data: &TrainData, cfg: &TrainConfig) -> Result<SeparatorCtx<'a>> {
    let cw = class_weights(&data.train.activity_rates());
    let mut weights = cfg.effective_weights();
    if critic.kind() == ModelKind::Classifier {
        weights.beta2 = 0.0;
    }
    weights.alpha2 *= cfg.mixture_loss_scale;
    weights.beta2 *= cfg.mixture_loss_scale;
    let score_weights = if weights.weight_separator_score { cw } else { vec![1.0; cw.len()] };
    Ok(SeparatorCtx { critic, score_weights, weights, bin_table: harmonic_bin_table(&cfg.harmonic)? })
}

fn validation_si_sdr(separator: &Model, data: &Dataset, r: &mut EpochRecord) -> Result<()> {
    if data.clips.iter().all(|c| c.audio.is_some()) {
        let rep = eval::separation_report(separator, data)?;
        r.val_si_sdr = rep.average;
        r.val_si_sdr_gain = rep.improvement();
    }
    Ok(())
}

fn train_separator(data: &TrainData, cfg: &TrainConfig, critic: &Model, step: &str, log: &mut TrainLog) -> Result<StepOutcome> {
    cfg.validate()?;
    data.check()?;
    if critic.num_instruments() != data.instruments.len() {
        return Err(TrainError::Config("critic instrument count differs from the data".into()));
    }
    let before = critic.params.fingerprint();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(ModelKind::Separator, data.instruments.clone(), cfg.separator_tcn, rng.gen())?;
    let ctx = separator_ctx(critic, data, cfg)?;
    let mut sched = Plateau::new(cfg.lr, cfg.lr_decay, cfg.plateau_patience, cfg.early_stop_patience);
    let mut adam = adam(cfg);
    let mut best = model.params.clone();
    let mut epochs = 0;
    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        epochs = epoch;
        let mut train = 0.0;
        for batch in batches(&mut rng, data.train.len(), cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            train += batch_update(&mut model, &mut adam, &batch, |g, m, idx| {
                backward_scaled(g, separator_clip_loss(g, m, &data.train.clips[idx], &ctx, true)?, scale)
            })? * batch.len() as f64;
        }
        train = check_finite(train / data.train.len() as f64, "training loss", epoch)?;
        let val = mean_loss(&data.validation, |g, c| Ok(separator_clip_loss(g, &model, c, &ctx, false)?.item()))?;
        let val = check_finite(val, "validation loss", epoch)?;
        let lr = sched.lr();
        let obs = sched.observe(val);
        if obs.improved {
            best = model.params.clone();
        }
        let mut r = record(step, ModelKind::Separator, epoch, lr, train, val, obs.improved, t0);
        validation_si_sdr(&model, &data.validation, &mut r)?;
        r.seconds = t0.elapsed().as_secs_f64();
        log.push(r)?;
        adam.lr = sched.lr();
        if obs.stop {
            break;
        }
    }
    if critic.params.fingerprint() != before {
        return Err(TrainError::CriticChanged);
    }
    model.params = best;
    Ok(StepOutcome { model, best_val_loss: sched.best(), epochs })
}

/// Step 2: separator supervised by a frozen step-1 transcriptor.
pub fn run_step2(data: &TrainData, cfg: &TrainConfig, transcriptor: &Model, log: &mut TrainLog) -> Result<StepOutcome> {
    if transcriptor.kind() != ModelKind::Transcriptor {
        return Err(TrainError::Config(format!("step 2 needs a transcriptor, got a {}", transcriptor.kind())));
    }
    train_separator(data, cfg, transcriptor, "2", log)
}

/// Baseline step 2: separator supervised by a frozen activity classifier
/// with the clip-level mixture loss only.
pub fn run_baseline(data: &TrainData, cfg: &TrainConfig, classifier: &Model, log: &mut TrainLog) -> Result<StepOutcome> {
    if classifier.kind() != ModelKind::Classifier {
        return Err(TrainError::Config(format!("baseline needs a classifier, got a {}", classifier.kind())));
    }
    train_separator(data, cfg, classifier, "baseline-2", log)
}

/// Step 3: joint fine-tuning. Each role keeps its own schedule and best
/// parameters; training ends when both have stopped improving.
pub fn run_step3(
    data: &TrainData,
    cfg: &TrainConfig,
    transcriptor: &Model,
    separator: &Model,
    log: &mut TrainLog,
) -> Result<JointOutcome> {
    cfg.validate()?;
    data.check()?;
    if transcriptor.kind() != ModelKind::Transcriptor || separator.kind() != ModelKind::Separator {
        return Err(TrainError::Config("step 3 needs a transcriptor and a separator".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trans = transcriptor.clone();
    let mut sep = separator.clone();
    let cw = class_weights(&data.train.activity_rates());
    let w = cfg.effective_weights();
    let new_sched = || Plateau::new(cfg.lr, cfg.lr_decay, cfg.plateau_patience, cfg.early_stop_patience);
    let (mut sched_t, mut sched_s) = (new_sched(), new_sched());
    let (mut adam_t, mut adam_s) = (adam(cfg), adam(cfg));
    let (mut best_t, mut best_s) = (trans.params.clone(), sep.params.clone());
    let n = data.instruments.len();
    let mut epochs = 0;
    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        epochs = epoch;
        let (mut train_t, mut train_s) = (0.0, 0.0);
        for batch in batches(&mut rng, data.train.len(), cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let critic = trans.clone();
            let ctx = separator_ctx(&critic, data, cfg)?;
            train_s += batch_update(&mut sep, &mut adam_s, &batch, |g, m, idx| {
                backward_scaled(g, separator_clip_loss(g, m, &data.train.clips[idx], &ctx, true)?, scale)
            })? * batch.len() as f64;

            let adversarial = w.alpha3 > 0.0 || w.beta3 > 0.0;
            let sources: Vec<Array> = if adversarial {
                batch
                    .iter()
                    .map(|&idx| Ok(eval::separate_magnitude(&sep, &data.train.clips[idx].magnitude)?))
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let labels: Vec<Array> = batch.iter().map(|&idx| data.train.clips[idx].roll.to_array()).collect();
            let remixes: Vec<Option<RemixBatch>> = (0..batch.len())
                .map(|b| {
                    (w.alpha3 > 0.0)
                        .then(|| remix_sample(&sources, &labels, &mut rng, cfg.exclude_self.then_some(b)))
                })
                .collect();
            let positions: Vec<usize> = (0..batch.len()).collect();
            train_t += batch_update(&mut trans, &mut adam_t, &positions, |g, m, b| {
                let clip = &data.train.clips[batch[b]];
                let p = m.forward(g, g.constant(clip.magnitude.clone()), true)?;
                let tl = transcription_losses(p, &labels[b], &cw, &w)?.total;
                let zero = || g.constant(Array::scalar(0.0));
                let atl = if w.beta3 > 0.0 {
                    let ps = (0..n)
                        .map(|i| Ok(m.forward(g, g.constant(sources[b].index_axis0(i)), true)?))
                        .collect::<Result<Vec<_>>>()?;
                    adversarial_transcription_loss(&ps, &labels[b], &cw)?
                } else {
                    zero()
                };
                let aml = match &remixes[b] {
                    Some(rm) => {
                        let pr = m.forward(g, g.constant(rm.mixture.clone()), true)?;
                        adversarial_mixture_loss(pr, &rm.labels, &cw)?
                    }
                    None => zero(),
                };
                backward_scaled(g, joint_transcriptor_loss(tl, aml, atl, &w)?, scale)
            })? * batch.len() as f64;
        }
        let train_t = check_finite(train_t / data.train.len() as f64, "transcriptor training loss", epoch)?;
        let train_s = check_finite(train_s / data.train.len() as f64, "separator training loss", epoch)?;

        let val_t = mean_loss(&data.validation, |g, c| Ok(scorer_loss(g, &trans, c, &cw, &w, false)?.item()))?;
        let val_t = check_finite(val_t, "transcriptor validation loss", epoch)?;
        let ctx = separator_ctx(&trans, data, cfg)?;
        let val_s = mean_loss(&data.validation, |g, c| Ok(separator_clip_loss(g, &sep, c, &ctx, false)?.item()))?;
        let val_s = check_finite(val_s, "separator validation loss", epoch)?;

        let (lr_t, lr_s) = (sched_t.lr(), sched_s.lr());
        let (obs_t, obs_s) = (sched_t.observe(val_t), sched_s.observe(val_s));
        if obs_t.improved {
            best_t = trans.params.clone();
        }
        if obs_s.improved {
            best_s = sep.params.clone();
        }
        let mut rt = record("3", ModelKind::Transcriptor, epoch, lr_t, train_t, val_t, obs_t.improved, t0);
        rt.val_f1 = Some(eval::frame_f1(&trans, &data.validation, cfg.threshold)?);
        let mut rs = record("3", ModelKind::Separator, epoch, lr_s, train_s, val_s, obs_s.improved, t0);
        validation_si_sdr(&sep, &data.validation, &mut rs)?;
        rt.seconds = t0.elapsed().as_secs_f64();
        rs.seconds = rt.seconds;
        log.push(rt)?;
        log.push(rs)?;
        adam_t.lr = sched_t.lr();
        adam_s.lr = sched_s.lr();
        if sched_t.stopped() && sched_s.stopped() {
            break;
        }
    }
    trans.params = best_t;
    sep.params = best_s;
    Ok(JointOutcome {
        transcriptor: trans,
        separator: sep,
        transcriptor_best: sched_t.best(),
        separator_best: sched_s.best(),
        epochs,
    })
}
