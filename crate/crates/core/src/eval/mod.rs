//! Separation and transcription metrics and reports.

mod notes;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Graph};
use crate::dsp::{si_sdr, DspError, Stft};
use crate::nn::{Model, ModelKind, NnError};
use crate::synth::{ClipFeatures, Dataset};

pub use notes::{
    count_notes, extract_notes, false_positive_rate, match_notes, note_accuracy, FrameCounts, NoteCounts,
    MIN_NOTE_FRAMES, ONSET_TOLERANCE_FRAMES,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("clip {0} has no ground-truth stems loaded")]
    MissingStems(String),
    #[error("expected a {expected} model, got {found}")]
    WrongModel { expected: ModelKind, found: ModelKind },
    #[error("model has {model} instruments, data has {data}")]
    InstrumentCount { model: usize, data: usize },
}

fn expect_kind(model: &Model, kind: ModelKind) -> Result<(), EvalError> {
    if model.kind() != kind {
        return Err(EvalError::WrongModel { expected: kind, found: model.kind() });
    }
    Ok(())
}

/// Masked magnitudes `[I, F, T]` for mixture magnitude `[F, T]`.
pub fn separate_magnitude(separator: &Model, magnitude: &Array) -> Result<Array, EvalError> {
    expect_kind(separator, ModelKind::Separator)?;
    let g = Graph::new();
    let (_, sources) = separator.separate(&g, g.constant(magnitude.clone()), false)?;
    Ok(sources.value().as_ref().clone())
}

/// Waveform per instrument: masked magnitude with the mixture phase.
pub fn separate_waveform(stft: &Stft, separator: &Model, mixture: &[f64]) -> Result<Vec<Vec<f64>>, EvalError> {
    let spec = stft.analyze(mixture)?;
    let sources = separate_magnitude(separator, &spec.magnitude)?;
    resynthesize(stft, &sources, &spec.phase, mixture.len())
}

fn resynthesize(stft: &Stft, sources: &Array, phase: &Array, len: usize) -> Result<Vec<Vec<f64>>, EvalError> {
    (0..sources.shape()[0])
        .map(|i| Ok(stft.synthesize(&sources.index_axis0(i), phase, len)?))
        .collect()
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let m = mean(values.iter().copied()).unwrap_or(f64::NAN);
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (m, var.sqrt())
}

/// SI-SDR per instrument averaged over the clips in which that instrument
/// plays (silent references have no SI-SDR). `average` is the mean of the
/// per-instrument values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub instruments: Vec<String>,
    pub si_sdr: Vec<Option<f64>>,
    pub average: Option<f64>,
    /// The same statistics with the unprocessed mixture as the estimate.
    pub mixture_si_sdr: Vec<Option<f64>>,
    pub mixture_average: Option<f64>,
    /// Clips contributing to each instrument's value.
    pub counts: Vec<usize>,
    pub clips: usize,
}

impl SeparationReport {
    /// Average SI-SDR gain over the unprocessed mixture.
    pub fn improvement(&self) -> Option<f64> {
        Some(self.average? - self.mixture_average?)
    }

    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        let mut s = format!("{:<12}{:>12}{:>12}{:>8}\n", "SI-SDR (dB)", "separated", "mixture", "clips");
        for (k, name) in self.instruments.iter().enumerate() {
            let _ = writeln!(
                s,
                "{name:<12}{:>12}{:>12}{:>8}",
                fmt(self.si_sdr[k]),
                fmt(self.mixture_si_sdr[k]),
                self.counts[k]
            );
        }
        let _ = writeln!(s, "{:<12}{:>12}{:>12}{:>8}", "average", fmt(self.average), fmt(self.mixture_average), self.clips);
        s
    }
}

/// Separates every clip of `data` (which must carry audio) and scores the
/// reconstructed stems against the references.
pub fn separation_report(separator: &Model, data: &Dataset) -> Result<SeparationReport, EvalError> {
    expect_kind(separator, ModelKind::Separator)?;
    let n = separator.num_instruments();
    if data.instruments() != n && !data.is_empty() {
        return Err(EvalError::InstrumentCount { model: n, data: data.instruments() });
    }
    let stft = Stft::new();
    let mut sep = vec![Vec::new(); n];
    let mut mix = vec![Vec::new(); n];
    for clip in &data.clips {
        let audio = clip.audio.as_ref().filter(|a| a.stems.len() == n).ok_or_else(|| EvalError::MissingStems(clip.id.clone()))?;
        let sources = separate_magnitude(separator, &clip.magnitude)?;
        let est = resynthesize(&stft, &sources, &audio.phase, audio.mixture.len())?;
        for i in 0..n {
            match si_sdr(&est[i], &audio.stems[i]) {
                Ok(v) => {
                    sep[i].push(v);
                    mix[i].push(si_sdr(&audio.mixture, &audio.stems[i])?);
                }
                Err(DspError::ZeroReference) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    let si_sdr: Vec<Option<f64>> = sep.iter().map(|v| mean(v.iter().copied())).collect();
    let mixture_si_sdr: Vec<Option<f64>> = mix.iter().map(|v| mean(v.iter().copied())).collect();
    Ok(SeparationReport {
        instruments: separator.instruments().to_vec(),
        average: mean(si_sdr.iter().flatten().copied()),
        mixture_average: mean(mixture_si_sdr.iter().flatten().copied()),
        si_sdr,
        mixture_si_sdr,
        counts: sep.iter().map(Vec::len).collect(),
        clips: data.len(),
    })
}

/// What the transcriptor listens to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranscribeOn {
    /// The mixture; every instrument's notes are scored.
    Mixture,
    /// Each ground-truth stem alone; only that stem's instrument is scored.
    Iso,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptionReport {
    pub on: TranscribeOn,
    pub threshold: f64,
    pub instruments: Vec<String>,
    pub note_accuracy: Vec<f64>,
    pub false_positive_rate: Vec<f64>,
    pub frame_f1: Vec<f64>,
    pub average_note_accuracy: f64,
    pub average_false_positive_rate: f64,
    /// Frame-level F1 pooled over all instruments, notes and frames.
    pub frame_f1_all: f64,
    pub clips: usize,
}

impl TranscriptionReport {
    pub fn to_table(&self) -> String {
        let on = match self.on {
            TranscribeOn::Mixture => "mixture",
            TranscribeOn::Iso => "iso tracks",
        };
        let mut s = format!("transcription on {on} (threshold {})\n", self.threshold);
        let _ = writeln!(s, "{:<12}{:>12}{:>12}{:>12}", "instrument", "note acc", "false pos", "frame F1");
        for (k, name) in self.instruments.iter().enumerate() {
            let _ = writeln!(
                s,
                "{name:<12}{:>12.3}{:>12.3}{:>12.3}",
                self.note_accuracy[k], self.false_positive_rate[k], self.frame_f1[k]
            );
        }
        let _ = writeln!(
            s,
            "{:<12}{:>12.3}{:>12.3}{:>12.3}",
            "average", self.average_note_accuracy, self.average_false_positive_rate, self.frame_f1_all
        );
        s
    }
}

fn instrument_row(a: &Array, i: usize) -> Array {
    let sub = a.index_axis0(i);
    let mut shape = vec![1];
    shape.extend_from_slice(sub.shape());
    sub.reshape(&shape).expect("same length")
}

/// Note- and frame-level scores of `transcriptor` on `data`.
pub fn transcription_report(
    transcriptor: &Model,
    data: &Dataset,
    on: TranscribeOn,
    threshold: f64,
) -> Result<TranscriptionReport, EvalError> {
    expect_kind(transcriptor, ModelKind::Transcriptor)?;
    let n = transcriptor.num_instruments();
    if data.instruments() != n && !data.is_empty() {
        return Err(EvalError::InstrumentCount { model: n, data: data.instruments() });
    }
    let stft = Stft::new();
    let mut notes = vec![NoteCounts::default(); n];
    let mut frames = vec![FrameCounts::default(); n];
    for clip in &data.clips {
        let y = clip.roll.to_array();
        let reference = clip.roll.note_events();
        match on {
            TranscribeOn::Mixture => {
                let p = transcriptor.predict(&clip.magnitude)?;
                let est = extract_notes(&p, threshold);
                for i in 0..n {
                    notes[i].add(score_instrument(&est, &reference, i));
                    frames[i].add(FrameCounts::from_probs(&instrument_row(&p, i), &instrument_row(&y, i), threshold));
                }
            }
            TranscribeOn::Iso => {
                let stems = stems_of(clip, n)?;
                for i in 0..n {
                    let p = transcriptor.predict(&stft.analyze(&stems[i])?.magnitude)?;
                    let est = extract_notes(&p, threshold);
                    notes[i].add(score_instrument(&est, &reference, i));
                    frames[i].add(FrameCounts::from_probs(&instrument_row(&p, i), &instrument_row(&y, i), threshold));
                }
            }
        }
    }
    let note_accuracy: Vec<f64> = notes.iter().map(NoteCounts::accuracy).collect();
    let fpr: Vec<f64> = notes.iter().map(NoteCounts::false_positive_rate).collect();
    let mut all = FrameCounts::default();
    frames.iter().for_each(|f| all.add(*f));
    Ok(TranscriptionReport {
        on,
        threshold,
        instruments: transcriptor.instruments().to_vec(),
        average_note_accuracy: mean(note_accuracy.iter().copied()).unwrap_or(0.0),
        average_false_positive_rate: mean(fpr.iter().copied()).unwrap_or(0.0),
        note_accuracy,
        false_positive_rate: fpr,
        frame_f1: frames.iter().map(FrameCounts::f1).collect(),
        frame_f1_all: all.f1(),
        clips: data.len(),
    })
}

fn stems_of(clip: &ClipFeatures, n: usize) -> Result<&[Vec<f64>], EvalError> {
    clip.audio
        .as_ref()
        .filter(|a| a.stems.len() == n)
        .map(|a| a.stems.as_slice())
        .ok_or_else(|| EvalError::MissingStems(clip.id.clone()))
}

fn score_instrument(est: &[crate::score::NoteEvent], reference: &[crate::score::NoteEvent], i: usize) -> NoteCounts {
    let e: Vec<_> = est.iter().filter(|n| n.instrument == i).cloned().collect();
    let r: Vec<_> = reference.iter().filter(|n| n.instrument == i).cloned().collect();
    count_notes(&e, &r)
}

/// Frame-level F1 of the transcriptor on mixtures, pooled over everything.
pub fn frame_f1(transcriptor: &Model, data: &Dataset, threshold: f64) -> Result<f64, EvalError> {
    expect_kind(transcriptor, ModelKind::Transcriptor)?;
    let mut c = FrameCounts::default();
    for clip in &data.clips {
        c.add(FrameCounts::from_probs(&transcriptor.predict(&clip.magnitude)?, &clip.roll.to_array(), threshold));
    }
    Ok(c.f1())
}

/// Frame-level instrument-activity F1 of a classifier on mixtures.
pub fn activity_f1(classifier: &Model, data: &Dataset, threshold: f64) -> Result<f64, EvalError> {
    expect_kind(classifier, ModelKind::Classifier)?;
    let mut c = FrameCounts::default();
    for clip in &data.clips {
        let p = classifier.predict(&clip.magnitude)?;
        let (_, inst) = crate::score::marginalize(&clip.roll.to_array()).expect("roll arrays are 3-d");
        c.add(FrameCounts::from_probs(&p, &inst, threshold));
    }
    Ok(c.f1())
}

/// Everything `eval` writes: tables plus a machine-readable copy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    pub separation: Option<SeparationReport>,
    pub transcription: Option<TranscriptionReport>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        if let Some(r) = &self.separation {
            s.push_str(&r.to_table());
        }
        if let Some(r) = &self.transcription {
            if !s.is_empty() {
                s.push('\n');
            }
            s.push_str(&r.to_table());
        }
        s
    }
}
