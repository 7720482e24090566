#![allow(dead_code)]

pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weaksep::autodiff::{Array, Graph, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    Array::from_fn(shape, |_| rng.gen_range(lo..hi))
}

pub fn binary(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Array {
    Array::from_fn(shape, |_| rng.gen_bool(p) as u8 as f64)
}

/// Central-difference check of d f / d x against reverse mode. Returns the
/// worst relative error, with magnitudes below `floor` treated as `floor`.
pub fn gradient_error(x: &Array, floor: f64, f: impl for<'g> Fn(&'g Graph, Tensor<'g>) -> Tensor<'g>) -> f64 {
    let g = Graph::new();
    let xt = g.input(x.clone());
    g.backward(f(&g, xt)).unwrap();
    let analytic = xt.grad().unwrap();
    let eps = 1e-5;
    let eval = |v: &Array| {
        let g = Graph::new();
        f(&g, g.constant(v.clone())).item()
    };
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        let mut up = x.clone();
        up.data_mut()[k] += eps;
        let mut down = x.clone();
        down.data_mut()[k] -= eps;
        let numeric = (eval(&up) - eval(&down)) / (2.0 * eps);
        let a = analytic.data()[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}
