mod common;

use common::{gradient_error, random, rng};
use weaksep::autodiff::{Array, Graph};
use weaksep::nn::{Model, ModelKind, TcnConfig};

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("i{i}")).collect()
}

fn tiny() -> TcnConfig {
    TcnConfig { repeats: 2, blocks_per_repeat: 3, channels: 5, kernel: 3, head_hidden: 0, channel_norm: true }
}

fn shift_frames(x: &Array, k: usize) -> Array {
    let (f, t) = (x.shape()[0], x.shape()[1]);
    Array::from_fn(&[f, t], |idx| {
        let (r, s) = (idx / t, idx % t);
        if s >= k {
            x.data()[r * t + s - k]
        } else {
            0.0
        }
    })
}

#[test]
fn shifting_input_shifts_output() {
    let mut r = rng(1);
    let cfg = tiny();
    let rf = cfg.receptive_field();
    let t = 3 * rf;
    // Signal confined to the middle so zero padding is never reached.
    let mut x = random(&mut r, &[1025, t], 0.0, 5.0);
    for f in 0..1025 {
        for s in 0..t {
            if !(rf..2 * rf - 4).contains(&s) {
                x.set(&[f, s], 0.0);
            }
        }
    }
    let k = 3;
    for kind in [ModelKind::Transcriptor, ModelKind::Classifier] {
        let m = Model::new(kind, names(2), cfg, 5).unwrap();
        let (y, ys) = (m.predict(&x).unwrap(), m.predict(&shift_frames(&x, k)).unwrap());
        let rows = y.len() / t;
        for row in 0..rows {
            for s in rf / 2..t - rf / 2 - k {
                let (a, b) = (y.data()[row * t + s], ys.data()[row * t + s + k]);
                assert!((a - b).abs() < 1e-9, "{kind} row {row} frame {s}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn perturbation_stays_inside_receptive_field() {
    let mut r = rng(2);
    let cfg = tiny();
    let half = (cfg.receptive_field() - 1) / 2;
    let t = 2 * cfg.receptive_field() + 10;
    let x = random(&mut r, &[1025, t], 0.0, 3.0);
    let m = Model::new(ModelKind::Classifier, names(2), cfg, 7).unwrap();
    let base = m.predict(&x).unwrap();
    let centre = t / 2;
    let mut bumped = x.clone();
    for f in 0..1025 {
        bumped.set(&[f, centre], x.get(&[f, centre]) + 1.0);
    }
    let out = m.predict(&bumped).unwrap();
    for i in 0..2 {
        for s in 0..t {
            let changed = base.get(&[i, s]) != out.get(&[i, s]);
            if s.abs_diff(centre) > half {
                assert!(!changed, "frame {s} outside the field changed");
            }
            if s.abs_diff(centre) == half {
                assert!(changed, "edge frame {s} unaffected");
            }
        }
    }
}

#[test]
fn masks_never_amplify() {
    let mut r = rng(3);
    let x = random(&mut r, &[1025, 6], 0.0, 10.0);
    let m = Model::new(ModelKind::Separator, names(3), tiny(), 1).unwrap();
    let g = Graph::new();
    let (masks, s) = m.separate(&g, g.constant(x.clone()), false).unwrap();
    assert_eq!(masks.shape(), vec![3, 1025, 6]);
    for (k, v) in s.value().data().iter().enumerate() {
        assert!(*v >= 0.0 && *v <= x.data()[k % x.len()]);
    }
}

#[test]
fn unit_masks_reproduce_the_mixture() {
    let mut r = rng(4);
    let x = random(&mut r, &[1025, 4], 0.0, 10.0);
    let g = Graph::new();
    let ones = g.constant(Array::filled(&[1, 1025, 4], 1.0));
    let s = ones.mul(g.constant(x.clone().reshape(&[1, 1025, 4]).unwrap())).unwrap();
    let dev = g.constant(x.clone().reshape(&[1, 1025, 4]).unwrap()).sub(s).unwrap().abs().sum().item();
    assert_eq!(dev, 0.0);
}

#[test]
fn separated_sum_gradient_matches_finite_differences() {
    // Masks are the sigmoid of logits; check d(sum M*X)/d logits.
    let mut r = rng(5);
    let x = random(&mut r, &[3, 4], 0.0, 2.0);
    let logits = random(&mut r, &[2, 3, 4], -2.0, 2.0);
    let err = gradient_error(&logits, 1e-3, |g, l| {
        let xx = g.constant(Array::from_fn(&[2, 3, 4], |k| x.data()[k % 12]));
        l.sigmoid().mul(xx).unwrap().sum()
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn model_parameter_gradients_match_finite_differences() {
    let mut r = rng(6);
    let cfg = TcnConfig { repeats: 1, blocks_per_repeat: 2, channels: 3, kernel: 3, head_hidden: 0, channel_norm: true };
    let mut m = Model::new(ModelKind::Classifier, names(2), cfg, 3).unwrap();
    let x = random(&mut r, &[1025, 5], 0.0, 2.0);
    let ids: Vec<_> = m.params.ids().collect();
    let loss = |m: &Model| {
        let g = Graph::new();
        let y = m.forward(&g, g.constant(x.clone()), true).unwrap();
        y.mul(y).unwrap().sum().item()
    };
    let g = Graph::new();
    let y = m.forward(&g, g.constant(x.clone()), true).unwrap();
    g.backward(y.mul(y).unwrap().sum()).unwrap();
    m.params.zero_grad();
    m.params.accumulate_grads(&g);
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for id in ids {
        let analytic = m.params.grad(id).to_vec();
        for k in (0..analytic.len()).step_by(7) {
            let orig = m.params.value(id).data()[k];
            m.params.value_mut(id).data_mut()[k] = orig + eps;
            let up = loss(&m);
            m.params.value_mut(id).data_mut()[k] = orig - eps;
            let down = loss(&m);
            m.params.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-4, "{worst}");
}
