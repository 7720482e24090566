use crate::autodiff::Array;
use crate::score::{NoteEvent, LOWEST_NOTE};

/// Largest onset difference, in frames, for two notes to match (50 ms
/// rounded up to whole frames).
pub const ONSET_TOLERANCE_FRAMES: usize = 2;
/// Shortest run, in frames, that counts as a note.
pub const MIN_NOTE_FRAMES: usize = 2;

/// Note events from probabilities `[I, 88, T]`: maximal runs with
/// `p > threshold` lasting at least [`MIN_NOTE_FRAMES`].
pub fn extract_notes(p: &Array, threshold: f64) -> Vec<NoteEvent> {
    assert_eq!(p.ndim(), 3, "expected [I, 88, T] probabilities");
    let (ni, nn, nt) = (p.shape()[0], p.shape()[1], p.shape()[2]);
    let d = p.data();
    let mut out = Vec::new();
    for i in 0..ni {
        for n in 0..nn {
            let row = &d[(i * nn + n) * nt..(i * nn + n + 1) * nt];
            let mut t = 0;
            while t < nt {
                if row[t] > threshold {
                    let start = t;
                    while t < nt && row[t] > threshold {
                        t += 1;
                    }
                    if t - start >= MIN_NOTE_FRAMES {
                        out.push(NoteEvent { instrument: i, note: LOWEST_NOTE + n as u8, onset: start, offset: t });
                    }
                } else {
                    t += 1;
                }
            }
        }
    }
    out
}

/// True positives, false positives and misses of one matching.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NoteCounts {
    pub matched: usize,
    pub false_positives: usize,
    pub misses: usize,
}

impl NoteCounts {
    pub fn add(&mut self, other: NoteCounts) {
        self.matched += other.matched;
        self.false_positives += other.false_positives;
        self.misses += other.misses;
    }

    /// `matched / (matched + false_positives + misses)`; 1 when both lists are empty.
    pub fn accuracy(&self) -> f64 {
        let total = self.matched + self.false_positives + self.misses;
        if total == 0 {
            1.0
        } else {
            self.matched as f64 / total as f64
        }
    }

    /// Unmatched share of the estimates; 0 without estimates.
    pub fn false_positive_rate(&self) -> f64 {
        let est = self.matched + self.false_positives;
        if est == 0 {
            0.0
        } else {
            self.false_positives as f64 / est as f64
        }
    }
}

/// Greedy one-to-one matching in onset order: each estimate takes the
/// unmatched reference of the same instrument and pitch with the closest
/// onset within tolerance (earliest on ties). Offsets are ignored. Returns
/// `(estimate, reference)` index pairs.
pub fn match_notes(est: &[NoteEvent], reference: &[NoteEvent]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..est.len()).collect();
    order.sort_by_key(|&e| (est[e].onset, est[e].instrument, est[e].note));
    let mut taken = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for e in order {
        let ev = &est[e];
        let best = reference
            .iter()
            .enumerate()
            .filter(|(r, rv)| {
                !taken[*r]
                    && rv.instrument == ev.instrument
                    && rv.note == ev.note
                    && rv.onset.abs_diff(ev.onset) <= ONSET_TOLERANCE_FRAMES
            })
            .min_by_key(|(r, rv)| (rv.onset.abs_diff(ev.onset), rv.onset, *r));
        if let Some((r, _)) = best {
            taken[r] = true;
            pairs.push((e, r));
        }
    }
    pairs
}

pub fn count_notes(est: &[NoteEvent], reference: &[NoteEvent]) -> NoteCounts {
    let matched = match_notes(est, reference).len();
    NoteCounts { matched, false_positives: est.len() - matched, misses: reference.len() - matched }
}

pub fn note_accuracy(est: &[NoteEvent], reference: &[NoteEvent]) -> f64 {
    count_notes(est, reference).accuracy()
}

pub fn false_positive_rate(est: &[NoteEvent], reference: &[NoteEvent]) -> f64 {
    count_notes(est, reference).false_positive_rate()
}

/// Frame-level detection counts over every entry of a roll-shaped array.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FrameCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl FrameCounts {
    /// Counts `p > threshold` against binary targets `y` of the same shape.
    pub fn from_probs(p: &Array, y: &Array, threshold: f64) -> Self {
        assert_eq!(p.shape(), y.shape(), "frame counts need matching shapes");
        let mut c = FrameCounts::default();
        for (&pv, &yv) in p.data().iter().zip(y.data()) {
            match (pv > threshold, yv > 0.5) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                _ => {}
            }
        }
        c
    }

    pub fn add(&mut self, o: FrameCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    /// F1 score; 1 when there is nothing to detect and nothing was detected.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}
