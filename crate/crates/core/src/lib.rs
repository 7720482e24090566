//! Music source separation trained from mixtures and aligned scores only.

pub mod autodiff;
pub mod dsp;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod score;
pub mod synth;
pub mod train;
