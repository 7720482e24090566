//! Synthetic corpus: random scores rendered by additive synthesis.
//!
//! Every clip is generated from its own ChaCha stream, so a clip depends only
//! on the corpus seed and its global index. Stems are kept for evaluation;
//! training code only sees mixtures and rolls.

mod corpus;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{FRAME_SECONDS, HOP, SAMPLE_RATE};
use crate::score::{note_to_freq, HarmonicConfig, PianoRoll, ScoreError, LOWEST_NOTE, NUM_NOTES};

pub use corpus::{
    generate_clip, read_manifest, write_corpus, ClipEntry, ClipFeatures, ClipSample, CorpusConfig, CorpusError, Dataset,
    EvalAudio, Manifest, Split, MANIFEST_FILE,
};

/// Additive-synthesis voice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timbre {
    /// Partial `l` (0-based) has amplitude `decay^l`.
    pub decay: f64,
    pub low: u8,
    pub high: u8,
    pub attack_ms: f64,
    pub release_ms: f64,
    pub level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSpec {
    pub name: String,
    pub timbre: Timbre,
    pub max_polyphony: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub instruments: Vec<InstrumentSpec>,
    pub clip_seconds: f64,
    /// Probability that a voice segment holds a note rather than a rest.
    pub density: f64,
    /// Probability that an instrument plays at all in a clip.
    pub presence: f64,
    pub min_note_frames: usize,
    pub max_note_frames: usize,
    /// Rendered partials per note (the fundamental included).
    pub partials: usize,
    /// Make bass play exactly when piano plays.
    pub correlated: bool,
    /// Peak level of the normalized mixture.
    pub peak: f64,
    pub tuning: HarmonicConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let inst = |name: &str, decay, low, high, attack_ms, release_ms, level, max_polyphony| InstrumentSpec {
            name: name.into(),
            timbre: Timbre { decay, low, high, attack_ms, release_ms, level },
            max_polyphony,
        };
        Self {
            instruments: vec![
                inst("bass", 0.6, 28, 52, 10.0, 40.0, 1.0, 1),
                inst("guitar", 0.75, 40, 76, 5.0, 60.0, 0.8, 3),
                inst("piano", 0.85, 36, 96, 5.0, 80.0, 0.6, 4),
            ],
            clip_seconds: 4.0,
            density: 0.6,
            presence: 0.8,
            min_note_frames: 6,
            max_note_frames: 24,
            partials: 10,
            correlated: false,
            peak: 0.9,
            tuning: HarmonicConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn num_samples(&self) -> usize {
        (self.clip_seconds * SAMPLE_RATE as f64).round() as usize
    }

    pub fn num_frames(&self) -> usize {
        crate::dsp::frame_count(self.num_samples())
    }

    pub fn instrument_names(&self) -> Vec<String> {
        self.instruments.iter().map(|i| i.name.clone()).collect()
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.instruments.iter().position(|i| i.name == name)
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        let top = LOWEST_NOTE + NUM_NOTES as u8 - 1;
        for i in &self.instruments {
            let t = &i.timbre;
            if t.low < LOWEST_NOTE || t.high > top || t.low > t.high {
                return Err(ScoreError::InvalidConfig(format!("{}: note range {}..={} invalid", i.name, t.low, t.high)));
            }
            if !(t.decay > 0.0 && t.decay < 1.0) {
                return Err(ScoreError::InvalidConfig(format!("{}: decay {} outside (0,1)", i.name, t.decay)));
            }
        }
        if self.min_note_frames == 0 || self.min_note_frames > self.max_note_frames {
            return Err(ScoreError::InvalidConfig("note length range invalid".into()));
        }
        if !(0.0..=1.0).contains(&self.density) || !(0.0..=1.0).contains(&self.presence) {
            return Err(ScoreError::InvalidConfig("density and presence must lie in [0, 1]".into()));
        }
        if self.correlated && (self.index_of("bass").is_none() || self.index_of("piano").is_none()) {
            return Err(ScoreError::InvalidConfig("correlated mode needs 'bass' and 'piano' instruments".into()));
        }
        self.tuning.validate()
    }
}

fn place_voice(rng: &mut impl Rng, roll: &mut PianoRoll, instrument: usize, spec: &InstrumentSpec, cfg: &GeneratorConfig) {
    let frames = roll.frames();
    let mut t = 0;
    while t < frames {
        let len = rng.gen_range(cfg.min_note_frames..=cfg.max_note_frames);
        let end = (t + len).min(frames);
        if rng.gen_bool(cfg.density) {
            // Avoid doubling a pitch another voice already holds here.
            for _ in 0..8 {
                let note = rng.gen_range(spec.timbre.low..=spec.timbre.high);
                let key = (note - LOWEST_NOTE) as usize;
                let clash = (t.saturating_sub(1)..(end + 1).min(frames)).any(|f| roll.get(instrument, key, f));
                if !clash {
                    roll.add_note(instrument, note, t, end).expect("range validated");
                    break;
                }
            }
        }
        t = end;
    }
}

/// Random score for every instrument of `cfg`, deterministic in `rng`.
pub fn generate_roll(rng: &mut impl Rng, cfg: &GeneratorConfig) -> Result<PianoRoll, ScoreError> {
    cfg.validate()?;
    let mut roll = PianoRoll::new(cfg.instruments.len(), cfg.num_frames());
    for (i, spec) in cfg.instruments.iter().enumerate() {
        if !rng.gen_bool(cfg.presence) {
            continue;
        }
        for _ in 0..spec.max_polyphony {
            place_voice(rng, &mut roll, i, spec, cfg);
        }
    }
    if cfg.correlated {
        let bass = cfg.index_of("bass").unwrap();
        let piano = cfg.index_of("piano").unwrap();
        let spec = &cfg.instruments[bass];
        let mut tied = roll.without(bass);
        let frames = roll.frames();
        let mut t = 0;
        while t < frames {
            if !roll.frame_active(piano, t) {
                t += 1;
                continue;
            }
            let mut end = t;
            while end < frames && roll.frame_active(piano, end) {
                end += 1;
            }
            // Fill the piano run with back-to-back bass notes of distinct pitch.
            let mut s = t;
            let mut prev = None;
            while s < end {
                let len = rng.gen_range(cfg.min_note_frames..=cfg.max_note_frames);
                let e = (s + len).min(end);
                let note = loop {
                    let n = rng.gen_range(spec.timbre.low..=spec.timbre.high);
                    if Some(n) != prev || spec.timbre.low == spec.timbre.high {
                        break n;
                    }
                };
                tied.add_note(bass, note, s, e)?;
                prev = Some(note);
                s = e;
            }
            t = end;
        }
        roll = tied;
    }
    Ok(roll)
}

/// Rendered stems (one per instrument) and their exact sum.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub stems: Vec<Vec<f64>>,
    pub mixture: Vec<f64>,
}

/// Additive rendering of `roll`: each note is `level * sum_l decay^l
/// sin(2 pi (l+1) f0 t)` over `partials` partials below Nyquist, shaped by
/// linear attack/release ramps inside the note span. The mixture is
/// peak-normalized to `peak` and the stems are scaled by the same factor.
pub fn render(
    roll: &PianoRoll,
    timbres: &[Timbre],
    partials: usize,
    tuning: &HarmonicConfig,
    num_samples: usize,
    peak: f64,
) -> Result<Rendered, ScoreError> {
    if timbres.len() != roll.instruments() {
        return Err(ScoreError::Shape(format!("{} timbres for {} instruments", timbres.len(), roll.instruments())));
    }
    let sr = SAMPLE_RATE as f64;
    let mut stems = vec![vec![0.0; num_samples]; roll.instruments()];
    for ev in roll.note_events() {
        let timbre = &timbres[ev.instrument];
        let f0 = note_to_freq(ev.note, tuning)?;
        let start = (ev.onset * HOP).min(num_samples);
        let end = (ev.offset * HOP).min(num_samples);
        if end <= start {
            continue;
        }
        let len = end - start;
        let attack = (timbre.attack_ms * 1e-3 * sr).max(1.0);
        let release = (timbre.release_ms * 1e-3 * sr).max(1.0);
        let amps: Vec<(f64, f64)> = (0..partials)
            .map(|l| (timbre.decay.powi(l as i32), f0 * (l + 1) as f64))
            .take_while(|&(_, f)| f < sr / 2.0)
            .collect();
        let stem = &mut stems[ev.instrument];
        for n in 0..len {
            let env = ((n as f64 + 0.5) / attack).min(1.0).min((len as f64 - n as f64 - 0.5) / release).max(0.0);
            let time = (start + n) as f64 / sr;
            let mut v = 0.0;
            for &(a, f) in &amps {
                v += a * (2.0 * std::f64::consts::PI * f * time).sin();
            }
            stem[start + n] += timbre.level * env * v;
        }
    }
    let raw_peak = (0..num_samples)
        .map(|n| stems.iter().map(|s| s[n]).sum::<f64>().abs())
        .fold(0.0, f64::max);
    if raw_peak > 0.0 {
        let g = peak / raw_peak;
        stems.iter_mut().flatten().for_each(|v| *v *= g);
    }
    let mixture = (0..num_samples).map(|n| stems.iter().map(|s| s[n]).sum()).collect();
    Ok(Rendered { stems, mixture })
}

/// Seconds covered by a roll of `frames` frames.
pub fn roll_seconds(frames: usize) -> f64 {
    frames as f64 * FRAME_SECONDS
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_density_gives_empty_roll() {
        let cfg = GeneratorConfig { density: 0.0, ..Default::default() };
        let roll = generate_roll(&mut ChaCha8Rng::seed_from_u64(1), &cfg).unwrap();
        assert!(roll.is_empty());
    }

    #[test]
    fn same_seed_same_roll() {
        let cfg = GeneratorConfig::default();
        let a = generate_roll(&mut ChaCha8Rng::seed_from_u64(42), &cfg).unwrap();
        let b = generate_roll(&mut ChaCha8Rng::seed_from_u64(42), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn notes_stay_in_range_and_polyphony() {
        let cfg = GeneratorConfig { presence: 1.0, ..Default::default() };
        for seed in 0..20 {
            let roll = generate_roll(&mut ChaCha8Rng::seed_from_u64(seed), &cfg).unwrap();
            for ev in roll.note_events() {
                let t = &cfg.instruments[ev.instrument].timbre;
                assert!((t.low..=t.high).contains(&ev.note));
            }
            for (i, spec) in cfg.instruments.iter().enumerate() {
                for f in 0..roll.frames() {
                    let n = (0..NUM_NOTES).filter(|&k| roll.get(i, k, f)).count();
                    assert!(n <= spec.max_polyphony);
                }
            }
        }
    }

    #[test]
    fn correlated_bass_tracks_piano() {
        let cfg = GeneratorConfig { correlated: true, ..Default::default() };
        for seed in 0..20 {
            let roll = generate_roll(&mut ChaCha8Rng::seed_from_u64(seed), &cfg).unwrap();
            for t in 0..roll.frames() {
                assert_eq!(roll.frame_active(0, t), roll.frame_active(2, t), "seed {seed} frame {t}");
            }
        }
    }

    #[test]
    fn empty_roll_renders_silence() {
        let cfg = GeneratorConfig::default();
        let timbres: Vec<Timbre> = cfg.instruments.iter().map(|i| i.timbre.clone()).collect();
        let r = render(&PianoRoll::new(3, 128), &timbres, 10, &cfg.tuning, 64000, 0.9).unwrap();
        assert!(r.mixture.iter().chain(r.stems.iter().flatten()).all(|&v| v == 0.0));
    }

    #[test]
    fn mixture_is_exact_sum_of_stems() {
        let cfg = GeneratorConfig::default();
        let roll = generate_roll(&mut ChaCha8Rng::seed_from_u64(5), &cfg).unwrap();
        let timbres: Vec<Timbre> = cfg.instruments.iter().map(|i| i.timbre.clone()).collect();
        let r = render(&roll, &timbres, 10, &cfg.tuning, cfg.num_samples(), 0.9).unwrap();
        for n in 0..r.mixture.len() {
            assert_eq!(r.mixture[n], r.stems[0][n] + r.stems[1][n] + r.stems[2][n]);
        }
        let peak = r.mixture.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak <= 0.9 + 1e-12);
    }
}
