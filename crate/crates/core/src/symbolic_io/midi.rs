//! Standard MIDI File (formats 0 and 1) note import.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};

/// A performed note resolved from a note-on/note-off pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidiNote {
    pub onset_sec: f64,
    pub duration_sec: f64,
    pub pitch: u8,
    pub velocity: u8,
}

fn midi_err(msg: impl Into<String>) -> Error {
    Error::Midi(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(midi_err(format!("truncated {} at byte {}", self.what, self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let mut v: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            v = (v << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(midi_err(format!("variable-length quantity too long in {} at byte {}", self.what, self.pos)))
    }
}

enum Timebase {
    /// Ticks per quarter note; tempo events apply.
    Metrical(u16),
    /// Fixed seconds per tick (SMPTE division).
    Absolute(f64),
}

#[derive(Clone, Copy)]
enum Kind {
    On { channel: u8, pitch: u8, velocity: u8 },
    Off { channel: u8, pitch: u8 },
}

struct Event {
    tick: u64,
    track: usize,
    seq: usize,
    kind: Kind,
}

type OpenNote = (usize, u64, u8);

/// Reads note events from SMF bytes and resolves them to notes in seconds,
/// honoring the tempo map. Notes from all tracks and channels are merged and
/// returned ordered by onset (ties keep event order).
pub fn import_midi(bytes: &[u8]) -> Result<Vec<MidiNote>> {
    let mut r = Reader::new(bytes, "header");
    if r.take(4)? != b"MThd" {
        return Err(midi_err("missing MThd header"));
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(midi_err("header chunk shorter than 6 bytes"));
    }
    let format = r.u16()?;
    let ntracks = r.u16()? as usize;
    let division = r.u16()?;
    r.take(header_len - 6)?;
    if format > 1 {
        return Err(midi_err(format!("unsupported SMF format {format}")));
    }
    let timebase = if division & 0x8000 != 0 {
        let fps = -((division >> 8) as u8 as i8) as f64;
        let per_frame = (division & 0xff) as f64;
        if fps <= 0.0 || per_frame <= 0.0 {
            return Err(midi_err("invalid SMPTE division"));
        }
        Timebase::Absolute(1.0 / (fps * per_frame))
    } else {
        if division == 0 {
            return Err(midi_err("zero ticks per quarter note"));
        }
        Timebase::Metrical(division)
    };

    let mut events = Vec::new();
    let mut tempos: Vec<(u64, usize, u32)> = Vec::new();
    let mut track = 0;
    while track < ntracks {
        if r.at_end() {
            return Err(midi_err(format!("file ends after {track} of {ntracks} tracks")));
        }
        let id = r.take(4)?;
        let len = r.u32()? as usize;
        let body = r.take(len)?;
        if id != b"MTrk" {
            continue; // unknown chunk
        }
        parse_track(body, track, &mut events, &mut tempos)?;
        track += 1;
    }

    tempos.sort_by_key(|&(tick, trk, _)| (tick, trk));
    let to_sec = |tick: u64| -> f64 {
        match timebase {
            Timebase::Absolute(spt) => tick as f64 * spt,
            Timebase::Metrical(tpq) => {
                let tpq = tpq as f64;
                let (mut sec, mut last_tick, mut uspq) = (0.0, 0u64, 500_000.0);
                for &(t, _, tempo) in tempos.iter().take_while(|&&(t, _, _)| t < tick) {
                    sec += (t - last_tick) as f64 * uspq / 1e6 / tpq;
                    last_tick = t;
                    uspq = tempo as f64;
                }
                sec + (tick - last_tick) as f64 * uspq / 1e6 / tpq
            }
        }
    };

    events.sort_by_key(|e| (e.tick, e.track, e.seq));
    // (channel, pitch) -> queue of (event index, tick, velocity)
    let mut open: HashMap<(u8, u8), VecDeque<OpenNote>> = HashMap::new();
    let mut notes: Vec<(usize, MidiNote)> = Vec::new();
    for (order, e) in events.iter().enumerate() {
        match e.kind {
            Kind::On { channel, pitch, velocity } if velocity > 0 => {
                open.entry((channel, pitch)).or_default().push_back((order, e.tick, velocity));
            }
            Kind::On { channel, pitch, .. } | Kind::Off { channel, pitch } => {
                if let Some((on_order, on_tick, velocity)) =
                    open.get_mut(&(channel, pitch)).and_then(VecDeque::pop_front)
                {
                    let onset = to_sec(on_tick);
                    notes.push((
                        on_order,
                        MidiNote { onset_sec: onset, duration_sec: to_sec(e.tick) - onset, pitch, velocity },
                    ));
                } else {
                    log::debug!("note-off for pitch {pitch} on channel {channel} without a sounding note");
                }
            }
        }
    }
    let mut dangling: Vec<String> = open
        .iter()
        .flat_map(|(&(ch, p), q)| q.iter().map(move |&(_, tick, _)| (tick, ch, p)))
        .map(|(tick, ch, p)| format!("note-on pitch {p} channel {ch} at tick {tick}"))
        .collect();
    if !dangling.is_empty() {
        dangling.sort();
        return Err(midi_err(format!("unresolved note-on events: {}", dangling.join(", "))));
    }
    notes.sort_by_key(|&(order, _)| order);
    Ok(notes.into_iter().map(|(_, n)| n).collect())
}

fn parse_track(body: &[u8], track: usize, events: &mut Vec<Event>, tempos: &mut Vec<(u64, usize, u32)>) -> Result<()> {
    let mut r = Reader::new(body, "track");
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut seq = 0;
    while !r.at_end() {
        tick += u64::from(r.vlq()?);
        let first = r.u8()?;
        let (status, first_data) = if first & 0x80 != 0 {
            (first, None)
        } else {
            let s = running.ok_or_else(|| midi_err(format!("data byte without running status in track {track}")))?;
            (s, Some(first))
        };
        match status {
            0x80..=0xef => {
                running = Some(status);
                let d1 = match first_data {
                    Some(d) => d,
                    None => r.u8()?,
                };
                let two = !matches!(status & 0xf0, 0xc0 | 0xd0);
                let d2 = if two { r.u8()? } else { 0 };
                let channel = status & 0x0f;
                let kind = match status & 0xf0 {
                    0x90 => Some(Kind::On { channel, pitch: d1, velocity: d2 }),
                    0x80 => Some(Kind::Off { channel, pitch: d1 }),
                    _ => None,
                };
                if let Some(kind) = kind {
                    events.push(Event { tick, track, seq, kind });
                    seq += 1;
                }
            }
            0xff => {
                running = None;
                let meta = r.u8()?;
                let len = r.vlq()? as usize;
                let data = r.take(len)?;
                match meta {
                    0x51 if len == 3 => {
                        let uspq = u32::from(data[0]) << 16 | u32::from(data[1]) << 8 | u32::from(data[2]);
                        if uspq == 0 {
                            return Err(midi_err(format!("zero tempo at tick {tick} in track {track}")));
                        }
                        tempos.push((tick, track, uspq));
                    }
                    0x2f => return Ok(()),
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.vlq()? as usize;
                r.take(len)?;
            }
            other => return Err(midi_err(format!("unexpected status byte {other:#04x} in track {track}"))),
        }
    }
    Ok(())
}
