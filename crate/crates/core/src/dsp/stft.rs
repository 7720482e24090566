use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{DspError, FFT_SIZE, HOP, NUM_BINS};
use crate::autodiff::Array;

/// Magnitude and phase of a short-time Fourier transform, both `[bins, frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub magnitude: Array,
    pub phase: Array,
    /// Length in samples of the analysed signal.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.magnitude.shape()[1]
    }
}

/// Number of frames for a signal of `len` samples: one frame centred on
/// every hop position inside the signal.
pub fn frame_count(len: usize) -> usize {
    len.div_ceil(HOP)
}

/// Periodic square-root Hann window, `sin(pi n / N)`.
pub fn sqrt_hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| (std::f64::consts::PI * i as f64 / n as f64).sin()).collect()
}

/// STFT analysis/synthesis with a 2048-sample square-root Hann window and a
/// 500-sample hop.
///
/// Frames are centred: the signal is reflect-padded by half a window at both
/// ends and frame `t` is centred on sample `t * HOP`. The hop does not divide
/// the window length, so synthesis divides the overlap-added signal by the
/// summed product of analysis and synthesis windows.
pub struct Stft {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Default for Stft {
    fn default() -> Self {
        Self::new()
    }
}

const HALF: usize = FFT_SIZE / 2;
const WINDOW_FLOOR: f64 = 1e-8;

impl Stft {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(FFT_SIZE),
            inverse: planner.plan_fft_inverse(FFT_SIZE),
            window: sqrt_hann(FFT_SIZE),
        }
    }

    pub fn analyze(&self, samples: &[f64]) -> Result<Spectrogram, DspError> {
        let len = samples.len();
        if len < FFT_SIZE {
            return Err(DspError::TooShort { len, min: FFT_SIZE });
        }
        let padded: Vec<f64> = (0..len + FFT_SIZE)
            .map(|j| {
                let i = j as isize - HALF as isize;
                let r = if i < 0 {
                    -i
                } else if i >= len as isize {
                    2 * (len as isize - 1) - i
                } else {
                    i
                };
                samples[r as usize]
            })
            .collect();
        let frames = frame_count(len);
        let mut magnitude = Array::zeros(&[NUM_BINS, frames]);
        let mut phase = Array::zeros(&[NUM_BINS, frames]);
        let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = t * HOP;
            for (n, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(padded[start + n] * self.window[n], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            let m = magnitude.data_mut();
            for f in 0..NUM_BINS {
                m[f * frames + t] = buf[f].norm();
            }
            let ph = phase.data_mut();
            for f in 0..NUM_BINS {
                ph[f * frames + t] = buf[f].arg();
            }
        }
        Ok(Spectrogram { magnitude, phase, signal_len: len })
    }

    /// Weighted overlap-add resynthesis of `signal_len` samples from a
    /// magnitude and a phase array of shape `[bins, frames]`.
    pub fn synthesize(&self, magnitude: &Array, phase: &Array, signal_len: usize) -> Result<Vec<f64>, DspError> {
        if magnitude.shape() != phase.shape() {
            return Err(DspError::ShapeMismatch {
                what: "istft magnitude/phase",
                lhs: magnitude.shape().to_vec(),
                rhs: phase.shape().to_vec(),
            });
        }
        if magnitude.ndim() != 2 || magnitude.shape()[0] != NUM_BINS {
            return Err(DspError::ShapeMismatch {
                what: "istft bins",
                lhs: magnitude.shape().to_vec(),
                rhs: vec![NUM_BINS, frame_count(signal_len)],
            });
        }
        let frames = magnitude.shape()[1];
        if frames != frame_count(signal_len) {
            return Err(DspError::ShapeMismatch {
                what: "istft frames",
                lhs: magnitude.shape().to_vec(),
                rhs: vec![NUM_BINS, frame_count(signal_len)],
            });
        }
        let total = signal_len + FFT_SIZE;
        let mut acc = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let (mag, ph) = (magnitude.data(), phase.data());
        for t in 0..frames {
            for f in 0..NUM_BINS {
                buf[f] = Complex64::from_polar(mag[f * frames + t], ph[f * frames + t]);
            }
            for f in NUM_BINS..FFT_SIZE {
                buf[f] = buf[FFT_SIZE - f].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = t * HOP;
            for n in 0..FFT_SIZE {
                let w = self.window[n];
                acc[start + n] += buf[n].re / FFT_SIZE as f64 * w;
                norm[start + n] += w * w;
            }
        }
        Ok((HALF..HALF + signal_len)
            .map(|j| if norm[j] < WINDOW_FLOOR { 0.0 } else { acc[j] / norm[j] })
            .collect())
    }
}
