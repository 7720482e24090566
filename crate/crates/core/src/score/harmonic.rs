use serde::{Deserialize, Serialize};

use super::{note_index, PianoRoll, ScoreError, LOWEST_NOTE, NUM_NOTES};
use crate::dsp::{FFT_SIZE, NUM_BINS, SAMPLE_RATE};

/// Tuning and harmonic-mask parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarmonicConfig {
    /// Reference frequency in Hz.
    pub tuning_freq: f64,
    /// MIDI note sounding at `tuning_freq`.
    pub tuning_note: u8,
    /// Number of partials including the fundamental.
    pub harmonics: usize,
    /// Bins on each side of a partial's centre bin that also count as active.
    pub tolerance_bins: usize,
}

impl Default for HarmonicConfig {
    fn default() -> Self {
        Self { tuning_freq: 440.0, tuning_note: 69, harmonics: 10, tolerance_bins: 1 }
    }
}

impl HarmonicConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if !(self.tuning_freq > 0.0) {
            return Err(ScoreError::InvalidConfig(format!("tuning_freq {} must be positive", self.tuning_freq)));
        }
        if self.harmonics == 0 {
            return Err(ScoreError::InvalidConfig("harmonics must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fundamental frequency of MIDI note `note` in equal temperament.
pub fn note_to_freq(note: u8, cfg: &HarmonicConfig) -> Result<f64, ScoreError> {
    note_index(note)?;
    Ok(cfg.tuning_freq * 2f64.powf((note as f64 - cfg.tuning_note as f64) / 12.0))
}

/// Frequency bins expected to carry energy for `note`: the rounded bin of
/// each partial below Nyquist, widened by the tolerance and clipped to the
/// spectrum. Sorted and deduplicated.
pub fn harmonic_bins(note: u8, cfg: &HarmonicConfig, fft_size: usize, sample_rate: u32) -> Result<Vec<usize>, ScoreError> {
    let f0 = note_to_freq(note, cfg)?;
    let nyquist = sample_rate as f64 / 2.0;
    let last_bin = fft_size / 2;
    let tol = cfg.tolerance_bins as isize;
    let mut bins = Vec::new();
    for l in 0..cfg.harmonics {
        let f = f0 * (l + 1) as f64;
        if f >= nyquist {
            break;
        }
        let centre = (f * fft_size as f64 / sample_rate as f64).round() as isize;
        for b in (centre - tol)..=(centre + tol) {
            if b >= 0 && b as usize <= last_bin {
                bins.push(b as usize);
            }
        }
    }
    bins.sort_unstable();
    bins.dedup();
    Ok(bins)
}

/// Per-bin and per-clip activity derived from a score.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicActivity {
    instruments: usize,
    bins: usize,
    frames: usize,
    active: Vec<bool>,
    clip_active: Vec<bool>,
}

impl HarmonicActivity {
    pub fn instruments(&self) -> usize {
        self.instruments
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn is_active(&self, instrument: usize, bin: usize, frame: usize) -> bool {
        self.active[(instrument * self.bins + bin) * self.frames + frame]
    }

    pub fn clip_active(&self) -> &[bool] {
        &self.clip_active
    }

    /// Flat `[instruments, bins, frames]` activity.
    pub fn active(&self) -> &[bool] {
        &self.active
    }
}

/// Bin sets for every key of the 88-note axis.
pub fn harmonic_bin_table(cfg: &HarmonicConfig) -> Result<Vec<Vec<usize>>, ScoreError> {
    (0..NUM_NOTES)
        .map(|k| harmonic_bins(LOWEST_NOTE + k as u8, cfg, FFT_SIZE, SAMPLE_RATE))
        .collect()
}

/// Activity of every (instrument, bin, frame) given the notes in `roll`.
pub fn build_harmonic_activity(roll: &PianoRoll, cfg: &HarmonicConfig) -> Result<HarmonicActivity, ScoreError> {
    cfg.validate()?;
    let table = harmonic_bin_table(cfg)?;
    Ok(build_with_table(roll, &table))
}

pub(crate) fn build_with_table(roll: &PianoRoll, table: &[Vec<usize>]) -> HarmonicActivity {
    let (instruments, frames) = (roll.instruments(), roll.frames());
    let mut active = vec![false; instruments * NUM_BINS * frames];
    for i in 0..instruments {
        for (k, bins) in table.iter().enumerate() {
            for t in 0..frames {
                if roll.get(i, k, t) {
                    for &b in bins {
                        active[(i * NUM_BINS + b) * frames + t] = true;
                    }
                }
            }
        }
    }
    let clip_active = (0..instruments).map(|i| roll.instrument_active(i)).collect();
    HarmonicActivity { instruments, bins: NUM_BINS, frames, active, clip_active }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn note_frequencies() {
        let cfg = HarmonicConfig::default();
        assert_eq!(note_to_freq(69, &cfg).unwrap(), 440.0);
        assert_eq!(note_to_freq(57, &cfg).unwrap(), 220.0);
        assert!((note_to_freq(60, &cfg).unwrap() - 261.6256).abs() < 1e-4);
        assert!(note_to_freq(20, &cfg).is_err());
        assert!(note_to_freq(109, &cfg).is_err());
    }

    #[test]
    fn a4_two_partials() {
        let cfg = HarmonicConfig { harmonics: 2, ..Default::default() };
        assert_eq!(harmonic_bins(69, &cfg, 2048, 16000).unwrap(), vec![55, 56, 57, 112, 113, 114]);
    }

    #[test]
    fn partials_above_nyquist_dropped() {
        let cfg = HarmonicConfig { harmonics: 2, ..Default::default() };
        // 4186 Hz -> bin 535.8; its octave lies above 8 kHz.
        assert_eq!(harmonic_bins(108, &cfg, 2048, 16000).unwrap(), vec![535, 536, 537]);
    }

    #[test]
    fn zero_tolerance_single_bin() {
        let cfg = HarmonicConfig { harmonics: 1, tolerance_bins: 0, ..Default::default() };
        assert_eq!(harmonic_bins(69, &cfg, 2048, 16000).unwrap(), vec![56]);
    }

    #[test]
    fn empty_roll_inactive() {
        let act = build_harmonic_activity(&PianoRoll::new(2, 5), &HarmonicConfig::default()).unwrap();
        assert!(act.active().iter().all(|a| !a));
        assert_eq!(act.clip_active(), &[false, false]);
    }

    #[test]
    fn sustained_note_constant_over_its_frames() {
        let cfg = HarmonicConfig::default();
        let mut roll = PianoRoll::new(1, 8);
        roll.add_note(0, 45, 2, 6).unwrap();
        let act = build_harmonic_activity(&roll, &cfg).unwrap();
        let bins = harmonic_bins(45, &cfg, 2048, 16000).unwrap();
        for t in 0..8 {
            for f in 0..NUM_BINS {
                let expected = (2..6).contains(&t) && bins.contains(&f);
                assert_eq!(act.is_active(0, f, t), expected, "bin {f} frame {t}");
            }
        }
        assert_eq!(act.clip_active(), &[true]);
    }

    #[test]
    fn invalid_config_rejected() {
        let roll = PianoRoll::new(1, 1);
        assert!(build_harmonic_activity(&roll, &HarmonicConfig { harmonics: 0, ..Default::default() }).is_err());
        assert!(build_harmonic_activity(&roll, &HarmonicConfig { tuning_freq: 0.0, ..Default::default() }).is_err());
    }
}
