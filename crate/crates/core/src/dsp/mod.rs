//! STFT analysis/synthesis at 16 kHz, SI-SDR, and WAV file I/O.

mod metrics;
mod stft;
mod wav;

pub use metrics::{si_sdr, SI_SDR_CAP_DB};
pub use stft::{frame_count, sqrt_hann, Spectrogram, Stft};
pub use wav::{read_wav, write_wav};

pub const SAMPLE_RATE: u32 = 16_000;
pub const FFT_SIZE: usize = 2048;
pub const HOP: usize = 500;
pub const NUM_BINS: usize = FFT_SIZE / 2 + 1;

/// Duration of one STFT frame step in seconds (31.25 ms).
pub const FRAME_SECONDS: f64 = HOP as f64 / SAMPLE_RATE as f64;

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("signal of {len} samples is shorter than the {min}-sample window")]
    TooShort { len: usize, min: usize },
    #[error("{what}: shape {lhs:?} does not match {rhs:?}")]
    ShapeMismatch { what: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("length mismatch: {0} vs {1} samples")]
    LengthMismatch(usize, usize),
    #[error("reference signal is identically zero")]
    ZeroReference,
    #[error("unsupported wav format: {0}")]
    Format(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}
