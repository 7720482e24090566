//! Standard MIDI File (type 0/1) reader and a minimal writer.
//!
//! Only note on/off, program change and tempo meta events matter here;
//! everything else is skipped. Notes become piano-roll spans at the STFT
//! frame rate: a note covers frame `t` when the frame centre `t * HOP / SR`
//! lies in `[onset, offset)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{PianoRoll, ScoreError};
use crate::dsp::FRAME_SECONDS;

const PERCUSSION_CHANNEL: u8 = 9;
const DEFAULT_TEMPO: u32 = 500_000;

/// Program range mapped to an instrument slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramRange {
    pub first: u8,
    pub last: u8,
    pub instrument: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnmappedProgram {
    #[default]
    Skip,
    Error,
}

/// Maps General MIDI programs to instrument slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstrumentMap {
    pub instruments: usize,
    pub ranges: Vec<ProgramRange>,
    #[serde(default)]
    pub unmapped: UnmappedProgram,
}

impl Default for InstrumentMap {
    /// Bass (GM 33–40), guitar (GM 25–32) and piano (GM 1–8), in that slot order.
    fn default() -> Self {
        Self {
            instruments: 3,
            ranges: vec![
                ProgramRange { first: 32, last: 39, instrument: 0 },
                ProgramRange { first: 24, last: 31, instrument: 1 },
                ProgramRange { first: 0, last: 7, instrument: 2 },
            ],
            unmapped: UnmappedProgram::Skip,
        }
    }
}

impl InstrumentMap {
    pub fn instrument_for(&self, program: u8) -> Option<usize> {
        self.ranges.iter().find(|r| (r.first..=r.last).contains(&program)).map(|r| r.instrument)
    }

    /// First program of the range mapped to `instrument`.
    pub fn program_for(&self, instrument: usize) -> Option<u8> {
        self.ranges.iter().find(|r| r.instrument == instrument).map(|r| r.first)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> ScoreError {
        ScoreError::Midi { offset: self.pos, msg: msg.into() }
    }

    fn u8(&mut self) -> Result<u8, ScoreError> {
        let b = *self.bytes.get(self.pos).ok_or_else(|| self.err("unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ScoreError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else { return Err(self.err(format!("need {n} bytes"))) };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, ScoreError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ScoreError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn varlen(&mut self) -> Result<u32, ScoreError> {
        let mut v: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            v = (v << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(self.err("variable-length quantity longer than 4 bytes"))
    }
}

#[derive(Debug)]
enum Event {
    Tempo(u32),
    Program { channel: u8, program: u8 },
    NoteOn { channel: u8, key: u8 },
    NoteOff { channel: u8, key: u8 },
}

enum Timing {
    Metrical(u16),
    Smpte { seconds_per_tick: f64 },
}

fn parse_track(c: &mut Cursor<'_>, end: usize, out: &mut Vec<(u64, usize, Event)>, order: &mut usize) -> Result<(), ScoreError> {
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    while c.pos < end {
        tick += c.varlen()? as u64;
        let first = c.u8()?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            let s = running.ok_or_else(|| c.err("data byte without running status"))?;
            c.pos -= 1;
            s
        };
        let mut push = |e: Event| {
            out.push((tick, *order, e));
            *order += 1;
        };
        match status {
            0xff => {
                let kind = c.u8()?;
                let len = c.varlen()? as usize;
                let data = c.take(len)?;
                if kind == 0x51 {
                    if len != 3 {
                        return Err(c.err("tempo event must have 3 data bytes"));
                    }
                    push(Event::Tempo(u32::from_be_bytes([0, data[0], data[1], data[2]])));
                }
                if kind == 0x2f {
                    break;
                }
            }
            0xf0 | 0xf7 => {
                let len = c.varlen()? as usize;
                c.take(len)?;
            }
            0x80..=0xef => {
                if first & 0x80 != 0 {
                    running = Some(status);
                }
                let channel = status & 0x0f;
                match status & 0xf0 {
                    0x80 => {
                        let key = c.u8()?;
                        c.u8()?;
                        push(Event::NoteOff { channel, key });
                    }
                    0x90 => {
                        let key = c.u8()?;
                        let vel = c.u8()?;
                        push(if vel == 0 { Event::NoteOff { channel, key } } else { Event::NoteOn { channel, key } });
                    }
                    0xc0 => {
                        let program = c.u8()?;
                        push(Event::Program { channel, program });
                    }
                    0xd0 => {
                        c.u8()?;
                    }
                    _ => {
                        c.take(2)?;
                    }
                }
            }
            other => return Err(c.err(format!("unsupported status byte {other:#04x}"))),
        }
    }
    c.pos = end;
    Ok(())
}

/// Seconds at each tick, following the tempo map.
struct TempoMap {
    /// (tick, seconds at tick, seconds per tick from here on)
    segments: Vec<(u64, f64, f64)>,
}

impl TempoMap {
    fn new(timing: &Timing, tempos: &[(u64, u32)]) -> Self {
        match *timing {
            Timing::Smpte { seconds_per_tick } => Self { segments: vec![(0, 0.0, seconds_per_tick)] },
            Timing::Metrical(tpq) => {
                let spt = |tempo: u32| tempo as f64 / 1e6 / tpq as f64;
                let mut segments = vec![(0u64, 0.0, spt(DEFAULT_TEMPO))];
                for &(tick, tempo) in tempos {
                    let &(t0, s0, rate) = segments.last().unwrap();
                    let s = s0 + (tick - t0) as f64 * rate;
                    if tick == t0 {
                        segments.pop();
                    }
                    segments.push((tick, s, spt(tempo)));
                }
                Self { segments }
            }
        }
    }

    fn seconds(&self, tick: u64) -> f64 {
        let i = self.segments.partition_point(|s| s.0 <= tick) - 1;
        let (t0, s0, rate) = self.segments[i];
        s0 + (tick - t0) as f64 * rate
    }
}

/// First frame whose centre is at or after `seconds`.
fn frame_at_or_after(seconds: f64) -> usize {
    (seconds / FRAME_SECONDS - 1e-9).ceil().max(0.0) as usize
}

/// Parse a Standard MIDI File into a piano roll. With `frames = None` the
/// roll is just long enough to hold the last note.
pub fn parse_midi(bytes: &[u8], map: &InstrumentMap, frames: Option<usize>) -> Result<PianoRoll, ScoreError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != b"MThd" {
        return Err(ScoreError::Midi { offset: 0, msg: "missing MThd header".into() });
    }
    let hlen = c.u32()? as usize;
    if hlen < 6 {
        return Err(c.err(format!("header length {hlen} < 6")));
    }
    let header_start = c.pos;
    let format = c.u16()?;
    let ntracks = c.u16()?;
    let division = c.u16()?;
    if format > 1 {
        return Err(ScoreError::Midi { offset: header_start, msg: format!("unsupported SMF format {format}") });
    }
    let timing = if division & 0x8000 == 0 {
        if division == 0 {
            return Err(ScoreError::Midi { offset: header_start + 4, msg: "zero ticks per quarter note".into() });
        }
        Timing::Metrical(division)
    } else {
        let fps = -((division >> 8) as i8) as f64;
        let per_frame = (division & 0xff) as f64;
        let fps = if fps == 29.0 { 29.97 } else { fps };
        Timing::Smpte { seconds_per_tick: 1.0 / (fps * per_frame) }
    };
    c.pos = header_start + hlen;

    let mut events = Vec::new();
    let mut order = 0;
    let mut found = 0;
    while found < ntracks as usize && c.pos < bytes.len() {
        let id_pos = c.pos;
        let id = c.take(4)?;
        let len = c.u32()? as usize;
        let end = c.pos.checked_add(len).filter(|&e| e <= bytes.len());
        let Some(end) = end else {
            return Err(ScoreError::Midi { offset: id_pos, msg: format!("chunk length {len} overruns file") });
        };
        if id == b"MTrk" {
            parse_track(&mut c, end, &mut events, &mut order)?;
            found += 1;
        }
        c.pos = end;
    }
    if found < ntracks as usize {
        return Err(ScoreError::Midi { offset: c.pos, msg: format!("expected {ntracks} tracks, found {found}") });
    }
    events.sort_by_key(|(tick, ord, _)| (*tick, *ord));

    let tempos: Vec<(u64, u32)> = events
        .iter()
        .filter_map(|(t, _, e)| if let Event::Tempo(v) = e { Some((*t, *v)) } else { None })
        .collect();
    let tempo_map = TempoMap::new(&timing, &tempos);

    let mut programs = [0u8; 16];
    // (channel, key) -> (instrument, onset tick, overlapping note-on count)
    let mut open: HashMap<(u8, u8), (usize, u64, u32)> = HashMap::new();
    let mut spans: Vec<(usize, u8, f64, f64)> = Vec::new();
    let last_tick = events.last().map_or(0, |e| e.0);
    for (tick, _, e) in &events {
        match *e {
            Event::Tempo(_) => {}
            Event::Program { channel, program } => programs[channel as usize] = program,
            Event::NoteOn { channel, key } => {
                if channel == PERCUSSION_CHANNEL {
                    continue;
                }
                let program = programs[channel as usize];
                let Some(instrument) = map.instrument_for(program) else {
                    match map.unmapped {
                        UnmappedProgram::Skip => continue,
                        UnmappedProgram::Error => return Err(ScoreError::UnmappedProgram { program, channel }),
                    }
                };
                open.entry((channel, key)).and_modify(|o| o.2 += 1).or_insert((instrument, *tick, 1));
            }
            Event::NoteOff { channel, key } => {
                if let Some(o) = open.get_mut(&(channel, key)) {
                    o.2 -= 1;
                    if o.2 == 0 {
                        let (instrument, start, _) = open.remove(&(channel, key)).unwrap();
                        spans.push((instrument, key, tempo_map.seconds(start), tempo_map.seconds(*tick)));
                    }
                }
            }
        }
    }
    let mut dangling: Vec<_> = open.into_iter().collect();
    dangling.sort_by_key(|(k, v)| (v.1, *k));
    for ((_, key), (instrument, start, _)) in dangling {
        spans.push((instrument, key, tempo_map.seconds(start), tempo_map.seconds(last_tick)));
    }

    let frames = frames.unwrap_or_else(|| spans.iter().map(|s| frame_at_or_after(s.3)).max().unwrap_or(0));
    let mut roll = PianoRoll::new(map.instruments, frames);
    for (instrument, key, on, off) in spans {
        if super::note_index(key).is_err() {
            continue;
        }
        roll.add_note(instrument, key, frame_at_or_after(on), frame_at_or_after(off))?;
    }
    Ok(roll)
}

const WRITE_TPQ: u16 = 480;
/// Ticks per STFT frame at 120 bpm and 480 ticks per quarter (31.25 ms).
const TICKS_PER_FRAME: u64 = 30;

fn push_varlen(out: &mut Vec<u8>, mut v: u64) {
    let mut buf = [0u8; 5];
    let mut n = 0;
    loop {
        buf[n] = (v & 0x7f) as u8;
        v >>= 7;
        n += 1;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(buf[i] | if i > 0 { 0x80 } else { 0 });
    }
}

/// Serialize a roll as a type-0 SMF with note boundaries on frame centres.
/// Instrument `i` plays on channel `i` with the first program of its range.
pub fn write_midi(roll: &PianoRoll, map: &InstrumentMap) -> Result<Vec<u8>, ScoreError> {
    if roll.instruments() > 15 {
        return Err(ScoreError::InvalidConfig("at most 15 instruments can be written".into()));
    }
    // (tick, is_on, channel, key); offs sort before ons at equal ticks.
    let mut ev: Vec<(u64, bool, u8, u8)> = Vec::new();
    for n in roll.note_events() {
        let ch = if n.instrument >= PERCUSSION_CHANNEL as usize { n.instrument + 1 } else { n.instrument } as u8;
        ev.push((n.onset as u64 * TICKS_PER_FRAME, true, ch, n.note));
        ev.push((n.offset as u64 * TICKS_PER_FRAME, false, ch, n.note));
    }
    ev.sort();
    let mut track = Vec::new();
    push_varlen(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x51, 0x03]);
    track.extend_from_slice(&DEFAULT_TEMPO.to_be_bytes()[1..]);
    for i in 0..roll.instruments() {
        let program = map
            .program_for(i)
            .ok_or_else(|| ScoreError::InvalidConfig(format!("instrument {i} has no program")))?;
        let ch = if i >= PERCUSSION_CHANNEL as usize { i + 1 } else { i } as u8;
        push_varlen(&mut track, 0);
        track.extend_from_slice(&[0xc0 | ch, program]);
    }
    let mut now = 0;
    for (tick, on, ch, key) in ev {
        push_varlen(&mut track, tick - now);
        now = tick;
        if on {
            track.extend_from_slice(&[0x90 | ch, key, 100]);
        } else {
            track.extend_from_slice(&[0x80 | ch, key, 0]);
        }
    }
    push_varlen(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&WRITE_TPQ.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::note_index;

    fn smf(tracks: &[Vec<u8>], tpq: u16) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&(if tracks.len() > 1 { 1u16 } else { 0 }).to_be_bytes());
        out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
        out.extend_from_slice(&tpq.to_be_bytes());
        for t in tracks {
            out.extend_from_slice(b"MTrk");
            out.extend_from_slice(&(t.len() as u32).to_be_bytes());
            out.extend_from_slice(t);
        }
        out
    }

    fn piano_map() -> InstrumentMap {
        InstrumentMap { instruments: 1, ranges: vec![ProgramRange { first: 0, last: 7, instrument: 0 }], unmapped: UnmappedProgram::Skip }
    }

    #[test]
    fn one_second_c4_at_120_bpm() {
        // 480 tpq at the default 120 bpm: 960 ticks per second (960 = 0x87 0x40).
        let track = vec![0x00, 0x90, 60, 100, 0x87, 0x40, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00];
        let roll = parse_midi(&smf(&[track], 480), &piano_map(), Some(40)).unwrap();
        let k = note_index(60).unwrap();
        for t in 0..40 {
            assert_eq!(roll.get(0, k, t), t < 32, "frame {t}");
        }
    }

    #[test]
    fn velocity_zero_is_note_off_and_running_status() {
        // note on, then running-status note-on with velocity 0 one second later.
        let track = vec![0x00, 0x90, 60, 100, 0x87, 0x40, 60, 0, 0x00, 0xff, 0x2f, 0x00];
        let roll = parse_midi(&smf(&[track], 480), &piano_map(), None).unwrap();
        assert_eq!(roll.frames(), 32);
        assert_eq!(roll.active_count(), 32);
    }

    #[test]
    fn tempo_change_honoured() {
        // Tempo 1 s per quarter from tick 0; note of 480 ticks lasts 1 s.
        let track = vec![
            0x00, 0xff, 0x51, 0x03, 0x0f, 0x42, 0x40, 0x00, 0x90, 64, 90, 0x83, 0x60, 0x80, 64, 0, 0x00, 0xff, 0x2f, 0x00,
        ];
        let roll = parse_midi(&smf(&[track], 480), &piano_map(), None).unwrap();
        assert_eq!(roll.frames(), 32);
    }

    #[test]
    fn empty_file_gives_empty_roll() {
        let roll = parse_midi(&smf(&[vec![0x00, 0xff, 0x2f, 0x00]], 480), &piano_map(), Some(10)).unwrap();
        assert!(roll.is_empty());
    }

    #[test]
    fn malformed_header_reports_offset() {
        let mut bytes = smf(&[vec![0x00, 0xff, 0x2f, 0x00]], 480);
        bytes[0] = b'X';
        assert!(matches!(parse_midi(&bytes, &piano_map(), None), Err(ScoreError::Midi { offset: 0, .. })));
        let mut bytes = smf(&[vec![0x00, 0xff, 0x2f, 0x00]], 480);
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(parse_midi(&bytes, &piano_map(), None), Err(ScoreError::Midi { offset: 14, .. })));
    }

    #[test]
    fn unmapped_program_policy() {
        let track = vec![0x00, 0xc0, 80, 0x00, 0x90, 60, 100, 0x60, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00];
        let bytes = smf(&[track], 480);
        assert!(parse_midi(&bytes, &piano_map(), None).unwrap().is_empty());
        let strict = InstrumentMap { unmapped: UnmappedProgram::Error, ..piano_map() };
        assert!(matches!(parse_midi(&bytes, &strict, None), Err(ScoreError::UnmappedProgram { program: 80, channel: 0 })));
    }

    #[test]
    fn overlapping_same_pitch_notes_merge() {
        // on@0, on@96, off@192, off@480 -> single span 0..480 ticks (0.5 s)
        let track = vec![
            0x00, 0x90, 60, 100, 0x60, 0x90, 60, 100, 0x60, 0x80, 60, 0, 0x82, 0x20, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00,
        ];
        let roll = parse_midi(&smf(&[track], 480), &piano_map(), None).unwrap();
        assert_eq!(roll.note_events().len(), 1);
        assert_eq!(roll.frames(), 16);
    }

    #[test]
    fn percussion_channel_ignored() {
        let track = vec![0x00, 0x99, 36, 100, 0x60, 0x89, 36, 0, 0x00, 0xff, 0x2f, 0x00];
        assert!(parse_midi(&smf(&[track], 480), &piano_map(), None).unwrap().is_empty());
    }

    #[test]
    fn write_then_parse_is_identity() {
        let map = InstrumentMap::default();
        let mut roll = PianoRoll::new(3, 20);
        roll.add_note(0, 40, 0, 5).unwrap();
        roll.add_note(1, 64, 3, 20).unwrap();
        roll.add_note(2, 64, 3, 7).unwrap();
        roll.add_note(2, 64, 8, 9).unwrap();
        let bytes = write_midi(&roll, &map).unwrap();
        assert_eq!(parse_midi(&bytes, &map, Some(20)).unwrap(), roll);
    }
}
