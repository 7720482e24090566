//! Plain-text piano-roll interchange.
//!
//! ```text
//! # weaksep piano roll
//! instruments 3
//! frames 128
//! # instrument note onset_frame offset_frame
//! 0 40 0 32
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Note lines list
//! maximal spans; onset is inclusive and offset exclusive.

use std::fmt::Write as _;

use super::{PianoRoll, ScoreError};

pub fn roll_to_text(roll: &PianoRoll) -> String {
    let mut s = String::from("# weaksep piano roll\n");
    let _ = writeln!(s, "instruments {}", roll.instruments());
    let _ = writeln!(s, "frames {}", roll.frames());
    s.push_str("# instrument note onset_frame offset_frame\n");
    for n in roll.note_events() {
        let _ = writeln!(s, "{} {} {} {}", n.instrument, n.note, n.onset, n.offset);
    }
    s
}

pub fn roll_from_text(text: &str) -> Result<PianoRoll, ScoreError> {
    let mut instruments = None;
    let mut frames = None;
    let mut roll: Option<PianoRoll> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| ScoreError::RollText { line: lineno + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["instruments", n] => instruments = Some(n.parse::<usize>().map_err(|e| err(e.to_string()))?),
            ["frames", n] => frames = Some(n.parse::<usize>().map_err(|e| err(e.to_string()))?),
            [i, n, on, off] => {
                let r = match &mut roll {
                    Some(r) => r,
                    None => {
                        let (Some(ni), Some(nf)) = (instruments, frames) else {
                            return Err(err("note before 'instruments' and 'frames' header".into()));
                        };
                        roll.insert(PianoRoll::new(ni, nf))
                    }
                };
                let parse = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
                let (inst, note, onset, offset) = (parse(i)?, parse(n)?, parse(on)?, parse(off)?);
                if offset <= onset || offset > r.frames() {
                    return Err(err(format!("bad span {onset}..{offset} for {} frames", r.frames())));
                }
                let note = u8::try_from(note).map_err(|e| err(e.to_string()))?;
                r.add_note(inst, note, onset, offset).map_err(|e| err(e.to_string()))?;
            }
            _ => return Err(err(format!("unrecognized line {line:?}"))),
        }
    }
    match (roll, instruments, frames) {
        (Some(r), _, _) => Ok(r),
        (None, Some(i), Some(f)) => Ok(PianoRoll::new(i, f)),
        _ => Err(ScoreError::RollText { line: 0, msg: "missing 'instruments'/'frames' header".into() }),
    }
}
