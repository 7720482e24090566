use super::ParamStore;

/// Adam with bias correction and optional decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Shrinks every parameter by `lr * weight_decay` of itself per step.
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.0, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients currently held in `store`.
    pub fn update(&mut self, store: &mut ParamStore) {
        if self.first.len() != store.len() {
            self.first = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let (value, grad) = store.value_and_grad_mut(id);
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (((p, g), m), v) in value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.lr * (m_hat / (v_hat.sqrt() + self.epsilon) + self.weight_decay * *p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Array, Graph};

    fn store_with(values: &[f64]) -> (ParamStore, crate::autodiff::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Array::new(&[values.len()], values.to_vec()).unwrap());
        (s, id)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut s, id) = store_with(&[0.0, 1.0, -3.0]);
        let g = Graph::new();
        let w = g.param(&s, id);
        g.backward(w.sum()).unwrap();
        s.accumulate_grads(&g);
        drop(g);
        let mut adam = Adam::new(0.001);
        adam.update(&mut s);
        for (after, before) in s.value(id).data().iter().zip([0.0, 1.0, -3.0]) {
            assert!((after - before + 0.001).abs() < 1e-10);
        }
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = store_with(&[0.25, -1.0]);
        let mut adam = Adam::new(0.001);
        adam.update(&mut s);
        assert_eq!(s.value(id).data(), &[0.25, -1.0]);
    }

    #[test]
    fn converges_on_quadratic() {
        let (mut s, id) = store_with(&[0.0]);
        let mut adam = Adam::new(0.1);
        for _ in 0..100 {
            s.zero_grad();
            let g = Graph::new();
            let w = g.param(&s, id);
            let d = w.add_scalar(-2.0);
            g.backward(d.mul(d).unwrap().sum()).unwrap();
            s.accumulate_grads(&g);
            drop(g);
            adam.update(&mut s);
        }
        let w = s.value(id).item();
        assert!((w - 2.0).abs() < 0.1, "w = {w}");
    }
}
