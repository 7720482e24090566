/// Learning rate decay on validation plateaus plus early stopping.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    lr: f64,
    decay: f64,
    patience: usize,
    stop_patience: usize,
    best: f64,
    bad_epochs: usize,
    since_best: usize,
    decays: usize,
}

/// Outcome of one [`Plateau::observe`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub decayed: bool,
    pub stop: bool,
}

impl Plateau {
    pub fn new(lr: f64, decay: f64, patience: usize, stop_patience: usize) -> Self {
        Self { lr, decay, patience, stop_patience, best: f64::INFINITY, bad_epochs: 0, since_best: 0, decays: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    pub fn stopped(&self) -> bool {
        self.since_best >= self.stop_patience
    }

    /// Records one epoch's validation loss. The rate is multiplied by
    /// `decay` after `patience` consecutive epochs without a new best;
    /// training should stop after `stop_patience` such epochs.
    pub fn observe(&mut self, loss: f64) -> Observation {
        let improved = loss < self.best;
        let mut decayed = false;
        if improved {
            self.best = loss;
            self.bad_epochs = 0;
            self.since_best = 0;
        } else {
            self.bad_epochs += 1;
            self.since_best += 1;
            if self.bad_epochs >= self.patience {
                self.lr *= self.decay;
                self.bad_epochs = 0;
                self.decays += 1;
                decayed = true;
            }
        }
        Observation { improved, decayed, stop: self.stopped() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_after_two_bad_epochs() {
        let mut p = Plateau::new(0.001, 0.5, 2, 10);
        assert!(p.observe(1.0).improved);
        assert!(!p.observe(1.0).decayed);
        assert!(p.observe(1.5).decayed);
        assert_eq!(p.lr(), 0.0005);
        assert!(p.observe(0.5).improved);
        assert_eq!(p.lr(), 0.0005);
    }

    #[test]
    fn k_plateaus_give_exact_powers() {
        let mut p = Plateau::new(0.001, 0.5, 2, 100);
        p.observe(1.0);
        for k in 1..=6 {
            p.observe(2.0);
            p.observe(2.0);
            assert_eq!(p.lr(), 0.001 * 0.5f64.powi(k));
        }
    }

    #[test]
    fn stops_at_exactly_ten() {
        let mut p = Plateau::new(0.001, 0.5, 2, 10);
        p.observe(1.0);
        for epoch in 1..=10 {
            assert_eq!(p.observe(1.0).stop, epoch == 10, "epoch {epoch}");
        }
    }
}
