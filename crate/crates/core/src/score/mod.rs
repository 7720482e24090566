//! Piano rolls, harmonic activity masks, and score file formats.

mod harmonic;
mod midi;
mod roll;
mod text;

pub use harmonic::{build_harmonic_activity, harmonic_bin_table, harmonic_bins, note_to_freq, HarmonicActivity, HarmonicConfig};
pub(crate) use harmonic::build_with_table;
pub use midi::{parse_midi, write_midi, InstrumentMap, ProgramRange, UnmappedProgram};
pub use roll::{marginalize, note_index, NoteEvent, PianoRoll};
pub use text::{roll_from_text, roll_to_text};

/// Keys on the note axis (MIDI 21–108).
pub const NUM_NOTES: usize = 88;
/// MIDI number of the lowest key (A0).
pub const LOWEST_NOTE: u8 = 21;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("MIDI note {0} outside 21..=108")]
    NoteOutOfRange(u8),
    #[error("instrument {0} out of range ({1} instruments)")]
    InstrumentOutOfRange(usize, usize),
    #[error("invalid harmonic config: {0}")]
    InvalidConfig(String),
    #[error("malformed MIDI at byte {offset}: {msg}")]
    Midi { offset: usize, msg: String },
    #[error("MIDI program {program} on channel {channel} has no instrument mapping")]
    UnmappedProgram { program: u8, channel: u8 },
    #[error("piano roll text line {line}: {msg}")]
    RollText { line: usize, msg: String },
    #[error("{0}")]
    Shape(String),
}
