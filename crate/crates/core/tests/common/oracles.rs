use weaksep::autodiff::Array;
use weaksep::dsp::NUM_BINS;
use weaksep::losses::PROB_EPS;
use weaksep::score::{HarmonicConfig, PianoRoll, NUM_NOTES};

pub fn h(y: f64, p: f64) -> f64 {
    let p = p.max(PROB_EPS).min(1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Score, pitch and instrument losses by explicit loops.
pub fn naive_transcription(p: &Array, y: &Array, w: &[f64]) -> (f64, f64, f64) {
    let (ni, nn, nt) = (p.shape()[0], p.shape()[1], p.shape()[2]);
    let mut score = 0.0;
    for i in 0..ni {
        for n in 0..nn {
            for t in 0..nt {
                score += w[i] * h(y.get(&[i, n, t]), p.get(&[i, n, t]));
            }
        }
    }
    let mut pitch = 0.0;
    for n in 0..nn {
        for t in 0..nt {
            let (mut yp, mut pp) = (0.0f64, 0.0f64);
            for i in 0..ni {
                yp = yp.max(y.get(&[i, n, t]));
                pp = pp.max(p.get(&[i, n, t]));
            }
            pitch += h(yp, pp);
        }
    }
    let mut inst = 0.0;
    for i in 0..ni {
        for t in 0..nt {
            let (mut yi, mut pi) = (0.0f64, 0.0f64);
            for n in 0..nn {
                yi = yi.max(y.get(&[i, n, t]));
                pi = pi.max(p.get(&[i, n, t]));
            }
            inst += h(yi, pi);
        }
    }
    (score, pitch, inst)
}

/// Per-source losses: `keep(i, j)` says whether source i's pass targets
/// instrument j's row of y (otherwise zero).
pub fn naive_per_source(ps: &[Array], y: &Array, w: &[f64], keep: impl Fn(usize, usize) -> bool) -> f64 {
    let (ni, nn, nt) = (y.shape()[0], y.shape()[1], y.shape()[2]);
    let mut total = 0.0;
    for (s, p) in ps.iter().enumerate() {
        for j in 0..ni {
            for n in 0..nn {
                for t in 0..nt {
                    let target = if keep(s, j) { y.get(&[j, n, t]) } else { 0.0 };
                    total += w[j] * h(target, p.get(&[j, n, t]));
                }
            }
        }
    }
    total
}

pub fn naive_mixture(x: &Array, s: &Array, active: impl Fn(usize, usize, usize) -> bool) -> f64 {
    let (ni, nf, nt) = (s.shape()[0], s.shape()[1], s.shape()[2]);
    let mut total = 0.0;
    for f in 0..nf {
        for t in 0..nt {
            let mut sum = 0.0;
            for i in 0..ni {
                if active(i, f, t) {
                    sum += s.get(&[i, f, t]);
                } else {
                    total += s.get(&[i, f, t]).abs();
                }
            }
            total += (x.get(&[f, t]) - sum).abs();
        }
    }
    total
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Brute force over (instrument, note, harmonic, tolerance).
pub fn harmonic_oracle(roll: &PianoRoll, cfg: &HarmonicConfig) -> Vec<bool> {
    let frames = roll.frames();
    let mut out = vec![false; roll.instruments() * NUM_BINS * frames];
    for i in 0..roll.instruments() {
        for n in 0..NUM_NOTES {
            for t in 0..frames {
                if !roll.get(i, n, t) {
                    continue;
                }
                let midi = 21.0 + n as f64;
                let f0 = cfg.tuning_freq * ((midi - cfg.tuning_note as f64) / 12.0).exp2();
                for l in 1..=cfg.harmonics {
                    let f = f0 * l as f64;
                    if f >= 8000.0 {
                        continue;
                    }
                    let c = (f / 16000.0 * 2048.0).round() as i64;
                    let tol = cfg.tolerance_bins as i64;
                    for b in c - tol..=c + tol {
                        if (0..NUM_BINS as i64).contains(&b) {
                            out[(i * NUM_BINS + b as usize) * frames + t] = true;
                        }
                    }
                }
            }
        }
    }
    out
}
