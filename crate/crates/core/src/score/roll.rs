use super::{ScoreError, LOWEST_NOTE, NUM_NOTES};
use crate::autodiff::Array;

/// A note held by one instrument over frames `[onset, offset)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NoteEvent {
    pub instrument: usize,
    /// MIDI note number.
    pub note: u8,
    pub onset: usize,
    pub offset: usize,
}

/// Binary activity tensor: instruments × 88 notes (MIDI 21–108) × frames.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PianoRoll {
    instruments: usize,
    frames: usize,
    data: Vec<u8>,
}

/// Index of a MIDI note on the 88-key axis.
pub fn note_index(note: u8) -> Result<usize, ScoreError> {
    if !(LOWEST_NOTE..LOWEST_NOTE + NUM_NOTES as u8).contains(&note) {
        return Err(ScoreError::NoteOutOfRange(note));
    }
    Ok((note - LOWEST_NOTE) as usize)
}

impl PianoRoll {
    pub fn new(instruments: usize, frames: usize) -> Self {
        Self { instruments, frames, data: vec![0; instruments * NUM_NOTES * frames] }
    }

    pub fn instruments(&self) -> usize {
        self.instruments
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    fn idx(&self, instrument: usize, key: usize, frame: usize) -> usize {
        debug_assert!(instrument < self.instruments && key < NUM_NOTES && frame < self.frames);
        (instrument * NUM_NOTES + key) * self.frames + frame
    }

    /// Activity by key index (0 = MIDI 21).
    pub fn get(&self, instrument: usize, key: usize, frame: usize) -> bool {
        self.data[self.idx(instrument, key, frame)] != 0
    }

    pub fn set(&mut self, instrument: usize, key: usize, frame: usize, active: bool) {
        let i = self.idx(instrument, key, frame);
        self.data[i] = active as u8;
    }

    /// Mark `note` active for `instrument` on frames `[onset, offset)`, clipped to the roll.
    pub fn add_note(&mut self, instrument: usize, note: u8, onset: usize, offset: usize) -> Result<(), ScoreError> {
        if instrument >= self.instruments {
            return Err(ScoreError::InstrumentOutOfRange(instrument, self.instruments));
        }
        let key = note_index(note)?;
        for t in onset..offset.min(self.frames) {
            self.set(instrument, key, t, true);
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Whether `instrument` plays anywhere in the clip.
    pub fn instrument_active(&self, instrument: usize) -> bool {
        let n = NUM_NOTES * self.frames;
        self.data[instrument * n..(instrument + 1) * n].iter().any(|&v| v != 0)
    }

    /// Whether `instrument` plays any note at `frame`.
    pub fn frame_active(&self, instrument: usize, frame: usize) -> bool {
        (0..NUM_NOTES).any(|k| self.get(instrument, k, frame))
    }

    pub fn active_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Roll as a `[instruments, 88, frames]` array of 0.0/1.0.
    pub fn to_array(&self) -> Array {
        Array::new(&[self.instruments, NUM_NOTES, self.frames], self.data.iter().map(|&v| v as f64).collect())
            .expect("roll shape")
    }

    /// Roll with only `instrument` kept; all other rows zeroed.
    pub fn only(&self, instrument: usize) -> PianoRoll {
        let mut out = PianoRoll::new(self.instruments, self.frames);
        let n = NUM_NOTES * self.frames;
        out.data[instrument * n..(instrument + 1) * n].copy_from_slice(&self.data[instrument * n..(instrument + 1) * n]);
        out
    }

    /// Roll with `instrument` zeroed.
    pub fn without(&self, instrument: usize) -> PianoRoll {
        let mut out = self.clone();
        let n = NUM_NOTES * self.frames;
        out.data[instrument * n..(instrument + 1) * n].iter_mut().for_each(|v| *v = 0);
        out
    }

    /// Row of one instrument copied into a roll of `dest` instrument slots at `slot`.
    pub fn copy_row_into(&self, instrument: usize, dest: &mut PianoRoll, slot: usize) {
        let n = NUM_NOTES * self.frames;
        dest.data[slot * n..(slot + 1) * n].copy_from_slice(&self.data[instrument * n..(instrument + 1) * n]);
    }

    /// Maximal runs of consecutive active frames, as note events.
    pub fn note_events(&self) -> Vec<NoteEvent> {
        let mut out = Vec::new();
        for i in 0..self.instruments {
            for k in 0..NUM_NOTES {
                let mut t = 0;
                while t < self.frames {
                    if self.get(i, k, t) {
                        let start = t;
                        while t < self.frames && self.get(i, k, t) {
                            t += 1;
                        }
                        out.push(NoteEvent { instrument: i, note: LOWEST_NOTE + k as u8, onset: start, offset: t });
                    } else {
                        t += 1;
                    }
                }
            }
        }
        out
    }

    /// Fraction of frames in which each instrument plays.
    pub fn frame_activity(&self) -> Vec<usize> {
        (0..self.instruments)
            .map(|i| (0..self.frames).filter(|&t| self.frame_active(i, t)).count())
            .collect()
    }
}

/// Pitch marginal (max over instruments, `[notes, frames]`) and instrument
/// marginal (max over notes, `[instruments, frames]`) of a 3-axis array.
pub fn marginalize(x: &Array) -> Result<(Array, Array), ScoreError> {
    let &[inst, notes, frames] = x.shape() else {
        return Err(ScoreError::Shape(format!("marginalize needs 3 axes, got {:?}", x.shape())));
    };
    let mut pitch = Array::filled(&[notes, frames], f64::NEG_INFINITY);
    let mut instrument = Array::filled(&[inst, frames], f64::NEG_INFINITY);
    let d = x.data();
    for i in 0..inst {
        for n in 0..notes {
            for t in 0..frames {
                let v = d[(i * notes + n) * frames + t];
                let p = &mut pitch.data_mut()[n * frames + t];
                *p = p.max(v);
                let q = &mut instrument.data_mut()[i * frames + t];
                *q = q.max(v);
            }
        }
    }
    Ok((pitch, instrument))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginals_of_single_instrument_roll() {
        let mut r = PianoRoll::new(1, 4);
        r.add_note(0, 60, 1, 3).unwrap();
        let (pitch, inst) = marginalize(&r.to_array()).unwrap();
        assert_eq!(pitch, r.to_array().reshape(&[88, 4]).unwrap());
        assert_eq!(inst.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn all_ones_marginals() {
        let a = Array::filled(&[2, 88, 3], 1.0);
        let (p, i) = marginalize(&a).unwrap();
        assert!(p.data().iter().chain(i.data()).all(|&v| v == 1.0));
    }

    #[test]
    fn disjoint_instruments_union() {
        let mut r = PianoRoll::new(2, 5);
        r.add_note(0, 40, 0, 2).unwrap();
        r.add_note(1, 70, 3, 5).unwrap();
        let (pitch, _) = marginalize(&r.to_array()).unwrap();
        let mut union = PianoRoll::new(1, 5);
        union.add_note(0, 40, 0, 2).unwrap();
        union.add_note(0, 70, 3, 5).unwrap();
        assert_eq!(pitch.data(), union.to_array().data());
    }

    #[test]
    fn note_events_are_maximal_runs() {
        let mut r = PianoRoll::new(2, 10);
        r.add_note(1, 50, 2, 6).unwrap();
        r.add_note(1, 50, 7, 9).unwrap();
        assert_eq!(
            r.note_events(),
            vec![
                NoteEvent { instrument: 1, note: 50, onset: 2, offset: 6 },
                NoteEvent { instrument: 1, note: 50, onset: 7, offset: 9 },
            ]
        );
    }

    #[test]
    fn out_of_range_note_rejected() {
        let mut r = PianoRoll::new(1, 2);
        assert!(r.add_note(0, 20, 0, 1).is_err());
        assert!(r.add_note(0, 109, 0, 1).is_err());
        assert!(r.add_note(1, 60, 0, 1).is_err());
    }
}
