use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_roll, render, GeneratorConfig, Timbre};
use crate::autodiff::Array;
use crate::dsp::{read_wav, write_wav, DspError, Stft};
use crate::score::{roll_from_text, roll_to_text, PianoRoll, ScoreError};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("{0} is not empty; pass force to overwrite")]
    Exists(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (train, validation, test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub generator: GeneratorConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { seed: 0, train: 500, validation: 50, test: 50, generator: GeneratorConfig::default() }
    }
}

impl CorpusConfig {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }

    /// Global clip index; each index owns one ChaCha stream of the corpus seed.
    pub fn stream(&self, split: Split, index: usize) -> u64 {
        let base = match split {
            Split::Train => 0,
            Split::Validation => self.train,
            Split::Test => self.train + self.validation,
        };
        (base + index) as u64
    }

    pub fn timbres(&self) -> Vec<Timbre> {
        self.generator.instruments.iter().map(|i| i.timbre.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    pub id: String,
    pub split: Split,
    pub mixture: Vec<f64>,
    /// Ground-truth stems, for evaluation only.
    pub stems: Vec<Vec<f64>>,
    pub roll: PianoRoll,
}

fn clip_id(split: Split, index: usize) -> String {
    format!("{}-{index:05}", split.name())
}

pub fn generate_clip(cfg: &CorpusConfig, split: Split, index: usize) -> Result<ClipSample, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream(split, index));
    let g = &cfg.generator;
    let roll = generate_roll(&mut rng, g)?;
    let r = render(&roll, &cfg.timbres(), g.partials, &g.tuning, g.num_samples(), g.peak)?;
    Ok(ClipSample { id: clip_id(split, index), split, mixture: r.mixture, stems: r.stems, roll })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub split: Split,
    pub index: usize,
    /// ChaCha stream the clip was drawn from.
    pub stream: u64,
    pub mixture: String,
    pub roll: String,
    pub stems: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub instruments: Vec<String>,
    pub config: CorpusConfig,
    pub clips: Vec<ClipEntry>,
}

impl Manifest {
    pub fn clips(&self, split: Split) -> impl Iterator<Item = &ClipEntry> {
        self.clips.iter().filter(move |c| c.split == split)
    }
}

/// Writes the corpus under `dir`:
///
/// ```text
/// manifest.json
/// clips/<id>.wav          mixture
/// clips/<id>.roll.txt     score
/// eval/<id>/<inst>.wav    ground-truth stems
/// ```
pub fn write_corpus(dir: &Path, cfg: &CorpusConfig, force: bool) -> Result<Manifest, CorpusError> {
    cfg.generator.validate()?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let occupied = fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied && !force {
        return Err(CorpusError::Exists(dir.to_path_buf()));
    }
    let clips_dir = dir.join("clips");
    fs::create_dir_all(&clips_dir).map_err(io_err(&clips_dir))?;
    let names = cfg.generator.instrument_names();
    let mut clips = Vec::new();
    for split in Split::ALL {
        for index in 0..cfg.count(split) {
            let clip = generate_clip(cfg, split, index)?;
            let mixture = format!("clips/{}.wav", clip.id);
            let roll = format!("clips/{}.roll.txt", clip.id);
            write_wav(&dir.join(&mixture), &clip.mixture)?;
            let roll_path = dir.join(&roll);
            fs::write(&roll_path, roll_to_text(&clip.roll)).map_err(io_err(&roll_path))?;
            let stem_dir = dir.join("eval").join(&clip.id);
            fs::create_dir_all(&stem_dir).map_err(io_err(&stem_dir))?;
            let mut stems = Vec::new();
            for (name, stem) in names.iter().zip(&clip.stems) {
                let rel = format!("eval/{}/{name}.wav", clip.id);
                write_wav(&dir.join(&rel), stem)?;
                stems.push(rel);
            }
            clips.push(ClipEntry { id: clip.id, split, index, stream: cfg.stream(split, index), mixture, roll, stems });
        }
    }
    let manifest = Manifest { version: MANIFEST_VERSION, instruments: names, config: cfg.clone(), clips };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CorpusError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| CorpusError::Manifest { path: path.clone(), msg: e.to_string() })?;
    if m.version != MANIFEST_VERSION {
        return Err(CorpusError::Manifest { path, msg: format!("unsupported version {}", m.version) });
    }
    Ok(m)
}

/// Audio kept alongside features for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalAudio {
    pub mixture: Vec<f64>,
    pub phase: Array,
    pub stems: Vec<Vec<f64>>,
}

/// One clip as seen by the models: mixture magnitude `[bins, frames]` and
/// its score.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatures {
    pub id: String,
    pub magnitude: Array,
    pub roll: PianoRoll,
    pub audio: Option<EvalAudio>,
}

impl ClipFeatures {
    pub fn from_sample(stft: &Stft, clip: ClipSample, keep_audio: bool) -> Result<Self, CorpusError> {
        let spec = stft.analyze(&clip.mixture)?;
        if spec.frames() != clip.roll.frames() {
            return Err(ScoreError::Shape(format!(
                "clip {}: roll has {} frames, spectrogram {}",
                clip.id,
                clip.roll.frames(),
                spec.frames()
            ))
            .into());
        }
        let audio = keep_audio.then(|| EvalAudio { mixture: clip.mixture, phase: spec.phase, stems: clip.stems });
        Ok(Self { id: clip.id, magnitude: spec.magnitude, roll: clip.roll, audio })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub clips: Vec<ClipFeatures>,
}

impl Dataset {
    /// Synthesizes `split` in memory.
    pub fn generate(cfg: &CorpusConfig, split: Split, keep_audio: bool) -> Result<Self, CorpusError> {
        let stft = Stft::new();
        let clips = (0..cfg.count(split))
            .map(|i| ClipFeatures::from_sample(&stft, generate_clip(cfg, split, i)?, keep_audio))
            .collect::<Result<_, _>>()?;
        Ok(Self { clips })
    }

    /// Loads `split` from a corpus directory. Stems are read only with `keep_audio`.
    pub fn load(dir: &Path, split: Split, keep_audio: bool) -> Result<Self, CorpusError> {
        let manifest = read_manifest(dir)?;
        let stft = Stft::new();
        let mut clips = Vec::new();
        for entry in manifest.clips(split) {
            let mixture = read_wav(&dir.join(&entry.mixture))?;
            let roll_path = dir.join(&entry.roll);
            let roll = roll_from_text(&fs::read_to_string(&roll_path).map_err(io_err(&roll_path))?)?;
            let stems = if keep_audio {
                entry.stems.iter().map(|s| read_wav(&dir.join(s))).collect::<Result<_, _>>()?
            } else {
                Vec::new()
            };
            let sample = ClipSample { id: entry.id.clone(), split, mixture, stems, roll };
            clips.push(ClipFeatures::from_sample(&stft, sample, keep_audio)?);
        }
        Ok(Self { clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn instruments(&self) -> usize {
        self.clips.first().map_or(0, |c| c.roll.instruments())
    }

    /// Fraction of frames in which each instrument plays.
    pub fn activity_rates(&self) -> Vec<f64> {
        let n = self.instruments();
        let mut active = vec![0usize; n];
        let mut frames = 0;
        for c in &self.clips {
            frames += c.roll.frames();
            for (i, count) in active.iter_mut().enumerate() {
                *count += (0..c.roll.frames()).filter(|&t| c.roll.frame_active(i, t)).count();
            }
        }
        active.iter().map(|&k| k as f64 / frames.max(1) as f64).collect()
    }
}
