//! Plain-text score and alignment formats, MIDI import, and onset grouping.
//!
//! Score files (`.score.tsv`) carry `#meter <start_beat> <B> <unit> <class>`
//! lines (at least one, the first at beat 0), an optional
//! `#key <tpc> <major|minor>` line, and one tab-separated note per line:
//!
//! ```text
//! id  onset  duration  midi  step  alter  octave  melody
//! ```
//!
//! `step`, `alter` and `octave` are all `-` for unspelled notes. Match files
//! (`.match.tsv`) hold one `score_id  onset_sec  duration_sec  velocity` line
//! per performed note.

mod midi;

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

pub use midi::{import_midi, MidiNote};

use crate::error::{domain, parse_err, validation, Result};
use crate::spiral_array::{Key, Mode};

/// Two onsets closer than this (in beats) belong to the same frame.
pub const ONSET_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    C,
    D,
    E,
    F,
    G,
    A,
    B,
}

impl Step {
    const FIFTHS_ORDER: [Step; 7] = [Step::F, Step::C, Step::G, Step::D, Step::A, Step::E, Step::B];

    /// Semitones above C.
    pub fn semitone(self) -> i32 {
        match self {
            Step::C => 0,
            Step::D => 2,
            Step::E => 4,
            Step::F => 5,
            Step::G => 7,
            Step::A => 9,
            Step::B => 11,
        }
    }

    /// Line-of-fifths index of the natural step, C = 0.
    pub fn tpc(self) -> i32 {
        match self {
            Step::F => -1,
            Step::C => 0,
            Step::G => 1,
            Step::D => 2,
            Step::A => 3,
            Step::E => 4,
            Step::B => 5,
        }
    }
}

impl FromStr for Step {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "C" => Step::C,
            "D" => Step::D,
            "E" => Step::E,
            "F" => Step::F,
            "G" => Step::G,
            "A" => Step::A,
            "B" => Step::B,
            other => return Err(format!("invalid step {other:?}")),
        })
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// A pitch with its spelling, e.g. C#4 versus Db4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpelledPitch {
    pub step: Step,
    pub alter: i32,
    pub octave: i32,
}

impl SpelledPitch {
    pub fn new(step: Step, alter: i32, octave: i32) -> Self {
        Self { step, alter, octave }
    }

    /// Line-of-fifths index; enharmonic spellings differ by multiples of 12.
    pub fn tpc(&self) -> i32 {
        self.step.tpc() + 7 * self.alter
    }

    /// MIDI note number with C4 = 60.
    pub fn midi(&self) -> i32 {
        12 * (self.octave + 1) + self.step.semitone() + self.alter
    }

    /// Spells `midi` with the given line-of-fifths index. Fails when the two
    /// disagree on pitch class.
    pub fn from_tpc(tpc: i32, midi: i32) -> Result<Self> {
        if (7 * tpc - midi).rem_euclid(12) != 0 {
            return Err(domain(format!("tpc {tpc} does not spell midi pitch {midi}")));
        }
        let step = Step::FIFTHS_ORDER[(tpc + 1).rem_euclid(7) as usize];
        let alter = (tpc + 1).div_euclid(7);
        let octave = (midi - step.semitone() - alter).div_euclid(12) - 1;
        Ok(Self { step, alter, octave })
    }
}

/// Spelling used for unspelled notes: the line-of-fifths position of the
/// pitch class nearest the key tonic, ties resolved toward the sharp side.
pub fn tpc_for_pitch_class(midi: i32, tonic_tpc: i32) -> i32 {
    let base = (7 * midi.rem_euclid(12)).rem_euclid(12);
    // the representative in (tonic - 6, tonic + 6]
    tonic_tpc + 6 - (tonic_tpc + 6 - base).rem_euclid(12)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNote {
    pub id: String,
    pub onset: f64,
    pub duration: f64,
    pub midi_pitch: u8,
    pub spelled: Option<SpelledPitch>,
    pub is_melody: bool,
}

impl ScoreNote {
    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeterClass {
    Duple,
    Triple,
    Other,
}

impl FromStr for MeterClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "duple" => Ok(MeterClass::Duple),
            "triple" => Ok(MeterClass::Triple),
            "other" => Ok(MeterClass::Other),
            other => Err(format!("invalid meter class {other:?}")),
        }
    }
}

impl fmt::Display for MeterClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeterClass::Duple => "duple",
            MeterClass::Triple => "triple",
            MeterClass::Other => "other",
        })
    }
}

/// A meter in force from `start_beat` until the next segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeterSegment {
    pub start_beat: f64,
    pub beats_per_bar: f64,
    pub beat_unit: u32,
    pub class: MeterClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub notes: Vec<ScoreNote>,
    pub meter_map: Vec<MeterSegment>,
    pub key: Option<Key>,
}

impl Score {
    /// Validates and sorts notes by (onset, pitch, id).
    pub fn new(mut notes: Vec<ScoreNote>, meter_map: Vec<MeterSegment>, key: Option<Key>) -> Result<Self> {
        validate_meter_map(&meter_map)?;
        let mut seen = HashSet::new();
        for n in &notes {
            validate_note(n)?;
            if !seen.insert(n.id.as_str()) {
                return Err(validation(format!("duplicate note id {:?}", n.id)));
            }
        }
        notes.sort_by(|a, b| {
            a.onset.total_cmp(&b.onset).then(a.midi_pitch.cmp(&b.midi_pitch)).then_with(|| a.id.cmp(&b.id))
        });
        Ok(Self { notes, meter_map, key })
    }

    /// Line-of-fifths index of a note, falling back to the key-aware spelling
    /// rule (C as reference when the key is unknown).
    pub fn tpc_of(&self, note: &ScoreNote) -> i32 {
        match note.spelled {
            Some(sp) => sp.tpc(),
            None => tpc_for_pitch_class(note.midi_pitch as i32, self.key.map_or(0, |k| k.tonic)),
        }
    }

    /// The meter segment in force at `beat`.
    pub fn meter_at(&self, beat: f64) -> Result<&MeterSegment> {
        self.meter_map
            .iter()
            .rev()
            .find(|m| m.start_beat <= beat + ONSET_TOLERANCE)
            .ok_or_else(|| domain(format!("beat {beat} precedes the meter map")))
    }

    pub fn note_index(&self) -> HashMap<&str, usize> {
        self.notes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect()
    }
}

fn validate_note(n: &ScoreNote) -> Result<()> {
    if n.id.is_empty() || n.id.chars().any(char::is_whitespace) {
        return Err(validation(format!("invalid note id {:?}", n.id)));
    }
    if !(n.onset.is_finite() && n.onset >= 0.0) {
        return Err(validation(format!("note {}: onset {} must be >= 0", n.id, n.onset)));
    }
    if !(n.duration.is_finite() && n.duration > 0.0) {
        return Err(validation(format!("note {}: duration {} must be > 0", n.id, n.duration)));
    }
    if n.midi_pitch > 127 {
        return Err(validation(format!("note {}: midi pitch {} out of range", n.id, n.midi_pitch)));
    }
    if let Some(sp) = n.spelled {
        if sp.midi() != n.midi_pitch as i32 {
            return Err(validation(format!(
                "note {}: spelling {}{:+}{} implies midi {}, not {}",
                n.id,
                sp.step,
                sp.alter,
                sp.octave,
                sp.midi(),
                n.midi_pitch
            )));
        }
    }
    Ok(())
}

fn validate_meter_map(map: &[MeterSegment]) -> Result<()> {
    let first = map.first().ok_or_else(|| validation("missing meter map"))?;
    if first.start_beat != 0.0 {
        return Err(validation("first meter segment must start at beat 0"));
    }
    for m in map {
        if !(m.beats_per_bar.is_finite() && m.beats_per_bar > 0.0) || m.beat_unit == 0 {
            return Err(validation(format!("invalid meter at beat {}", m.start_beat)));
        }
    }
    if map.windows(2).any(|w| w[1].start_beat <= w[0].start_beat) {
        return Err(validation("meter map must be strictly increasing in start beat"));
    }
    Ok(())
}

fn field<T: FromStr>(s: &str, what: &str, line: usize) -> Result<T> {
    s.trim().parse().map_err(|_| parse_err(line, format!("invalid {what} {s:?}")))
}

/// Parses score-file text.
pub fn parse_score(text: &str) -> Result<Score> {
    let mut notes = Vec::new();
    let mut meter_map = Vec::new();
    let mut key = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut parts = rest.split_whitespace();
            match parts.next() {
                Some("meter") => {
                    let p: Vec<&str> = parts.collect();
                    if p.len() != 4 {
                        return Err(parse_err(line_no, "expected #meter <start_beat> <B> <unit> <class>"));
                    }
                    let class = p[3].parse::<MeterClass>().map_err(|e| parse_err(line_no, e))?;
                    meter_map.push(MeterSegment {
                        start_beat: field(p[0], "start beat", line_no)?,
                        beats_per_bar: field(p[1], "bar length", line_no)?,
                        beat_unit: field(p[2], "beat unit", line_no)?,
                        class,
                    });
                }
                Some("key") => {
                    let p: Vec<&str> = parts.collect();
                    if p.len() != 2 {
                        return Err(parse_err(line_no, "expected #key <tpc> <major|minor>"));
                    }
                    let mode = p[1].parse::<Mode>().map_err(|e| parse_err(line_no, e.to_string()))?;
                    key = Some(Key { tonic: field(p[0], "key tonic", line_no)?, mode });
                }
                _ => {} // comment
            }
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(parse_err(line_no, format!("expected 8 tab-separated fields, found {}", f.len())));
        }
        let spelled = match (f[4].trim(), f[5].trim(), f[6].trim()) {
            ("-", "-", "-") => None,
            (s, a, o) => Some(SpelledPitch {
                step: s.parse().map_err(|e: String| parse_err(line_no, e))?,
                alter: field(a, "alter", line_no)?,
                octave: field(o, "octave", line_no)?,
            }),
        };
        let is_melody = match f[7].trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(line_no, format!("melody flag must be 0 or 1, found {other:?}"))),
        };
        let midi: i64 = field(f[3], "midi pitch", line_no)?;
        if !(0..=127).contains(&midi) {
            return Err(validation(format!("line {line_no}: midi pitch {midi} out of range")));
        }
        notes.push(ScoreNote {
            id: f[0].trim().to_string(),
            onset: field(f[1], "onset", line_no)?,
            duration: field(f[2], "duration", line_no)?,
            midi_pitch: midi as u8,
            spelled,
            is_melody,
        });
    }
    Score::new(notes, meter_map, key)
}

/// Serializes a score in the format read by [`parse_score`].
pub fn write_score(score: &Score) -> String {
    let mut out = String::new();
    for m in &score.meter_map {
        let _ = writeln!(out, "#meter {} {} {} {}", m.start_beat, m.beats_per_bar, m.beat_unit, m.class);
    }
    if let Some(k) = score.key {
        let _ = writeln!(out, "#key {} {}", k.tonic, k.mode);
    }
    for n in &score.notes {
        let (s, a, o) = match n.spelled {
            Some(sp) => (sp.step.to_string(), sp.alter.to_string(), sp.octave.to_string()),
            None => ("-".into(), "-".into(), "-".into()),
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            n.id,
            n.onset,
            n.duration,
            n.midi_pitch,
            s,
            a,
            o,
            u8::from(n.is_melody)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformedNote {
    pub score_id: String,
    pub onset_sec: f64,
    pub duration_sec: f64,
    pub velocity: u8,
}

/// An alignment of performed notes to a score. Score notes without a match
/// (deletions) are listed in `missing`.
#[derive(Debug, Clone, PartialEq)]
pub struct Performance {
    pub notes: Vec<PerformedNote>,
    pub missing: Vec<String>,
}

impl Performance {
    pub fn new(notes: Vec<PerformedNote>, score: &Score) -> Result<Self> {
        let index = score.note_index();
        let mut matched = HashSet::new();
        for n in &notes {
            if !index.contains_key(n.score_id.as_str()) {
                return Err(validation(format!("performed note references unknown score id {:?}", n.score_id)));
            }
            if !matched.insert(n.score_id.as_str()) {
                return Err(validation(format!("score note {:?} matched more than once", n.score_id)));
            }
            if !(1..=127).contains(&n.velocity) {
                return Err(validation(format!("note {:?}: velocity {} outside 1-127", n.score_id, n.velocity)));
            }
            if !(n.onset_sec.is_finite() && n.onset_sec >= 0.0) {
                return Err(validation(format!("note {:?}: onset {} must be >= 0", n.score_id, n.onset_sec)));
            }
            if !(n.duration_sec.is_finite() && n.duration_sec > 0.0) {
                return Err(validation(format!("note {:?}: duration {} must be > 0", n.score_id, n.duration_sec)));
            }
        }
        let missing: Vec<String> =
            score.notes.iter().filter(|n| !matched.contains(n.id.as_str())).map(|n| n.id.clone()).collect();
        Ok(Self { notes, missing })
    }
}

/// Parses match-file text against an already parsed score.
pub fn parse_performance(text: &str, score: &Score) -> Result<Performance> {
    let mut notes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(parse_err(line_no, format!("expected 4 tab-separated fields, found {}", f.len())));
        }
        let velocity: i64 = field(f[3], "velocity", line_no)?;
        if !(1..=127).contains(&velocity) {
            return Err(validation(format!("line {line_no}: velocity {velocity} outside 1-127")));
        }
        notes.push(PerformedNote {
            score_id: f[0].trim().to_string(),
            onset_sec: field(f[1], "onset", line_no)?,
            duration_sec: field(f[2], "duration", line_no)?,
            velocity: velocity as u8,
        });
    }
    let perf = Performance::new(notes, score)?;
    if !perf.missing.is_empty() {
        log::warn!("{} score notes have no performed match", perf.missing.len());
    }
    Ok(perf)
}

pub fn write_performance(perf: &Performance) -> String {
    let mut out = String::new();
    for n in &perf.notes {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", n.score_id, n.onset_sec, n.duration_sec, n.velocity);
    }
    out
}

/// A unique score position and the notes starting there.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetFrame {
    pub index: usize,
    pub beat: f64,
    pub note_ids: Vec<String>,
    /// Positions of the same notes in `Score::notes`.
    pub note_indices: Vec<usize>,
}

/// Partitions the score's notes into frames of equal onset.
pub fn group_onsets(score: &Score) -> Vec<OnsetFrame> {
    let mut frames: Vec<OnsetFrame> = Vec::new();
    for (i, n) in score.notes.iter().enumerate() {
        match frames.last_mut() {
            Some(f) if n.onset - f.beat <= ONSET_TOLERANCE => {
                f.note_ids.push(n.id.clone());
                f.note_indices.push(i);
            }
            _ => frames.push(OnsetFrame {
                index: frames.len(),
                beat: n.onset,
                note_ids: vec![n.id.clone()],
                note_indices: vec![i],
            }),
        }
    }
    frames
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    const ONE_NOTE: &str = "#meter 0 4 4 duple\nn1\t0\t1\t60\tC\t0\t4\t0\n";
    const TRIAD: &str = "#meter 0 4 4 duple\n#key 0 major\n\
        n1\t0\t1\t60\tC\t0\t4\t0\n\
        n2\t0\t1\t64\tE\t0\t4\t0\n\
        n3\t0\t1\t67\tG\t0\t4\t1\n";

    #[test]
    fn tpc_convention() {
        assert_eq!(SpelledPitch::new(Step::C, 0, 4).tpc(), 0);
        assert_eq!(SpelledPitch::new(Step::G, 0, 4).tpc(), 1);
        assert_eq!(SpelledPitch::new(Step::F, 0, 4).tpc(), -1);
        assert_eq!(SpelledPitch::new(Step::C, 1, 4).tpc(), 7);
        assert_eq!(SpelledPitch::new(Step::D, -1, 4).tpc(), -5);
        assert_eq!(SpelledPitch::new(Step::C, 0, 4).midi(), 60);
        assert_eq!(SpelledPitch::new(Step::B, 1, 3).midi(), 60);
    }

    #[test]
    fn from_tpc_inverts_spelling() {
        for tpc in -20i32..20 {
            let midi: i32 = 60 + (7 * tpc).rem_euclid(12);
            let sp = SpelledPitch::from_tpc(tpc, midi).unwrap();
            assert_eq!(sp.tpc(), tpc);
            assert_eq!(sp.midi(), midi);
        }
        assert!(SpelledPitch::from_tpc(0, 61).is_err());
    }

    #[test]
    fn unspelled_notes_follow_the_key() {
        // F#/Gb: tie in C resolves sharp
        assert_eq!(tpc_for_pitch_class(66, 0), 6);
        assert_eq!(tpc_for_pitch_class(61, 0), -5);
        assert_eq!(tpc_for_pitch_class(70, 0), -2);
        // in Db major (tpc -5) the same pitch classes are flats
        assert_eq!(tpc_for_pitch_class(61, -5), -5);
        assert_eq!(tpc_for_pitch_class(66, -5), -6);
        for tonic in -8..8 {
            for pc in 0..12 {
                let t = tpc_for_pitch_class(pc, tonic);
                assert!(t > tonic - 6 && t <= tonic + 6);
                assert_eq!((7 * t - pc).rem_euclid(12), 0);
            }
        }
    }

    #[test]
    fn parse_one_note() {
        let s = parse_score(ONE_NOTE).unwrap();
        assert_eq!(s.notes.len(), 1);
        assert_eq!(s.tpc_of(&s.notes[0]), 0);
        assert_eq!(s.meter_map[0].class, MeterClass::Duple);
        assert!(s.key.is_none());
    }

    #[test]
    fn parse_triad_shares_onset() {
        let s = parse_score(TRIAD).unwrap();
        assert_eq!(s.notes.len(), 3);
        assert!(s.notes.iter().all(|n| n.onset == 0.0));
        assert_eq!(s.key, Some(Key { tonic: 0, mode: Mode::Major }));
        assert!(s.notes[2].is_melody);
    }

    #[test]
    fn parse_errors() {
        let zero_dur = "#meter 0 4 4 duple\nn1\t0\t0\t60\tC\t0\t4\t0\n";
        assert!(matches!(parse_score(zero_dur), Err(Error::Validation(_))));
        let dup = "#meter 0 4 4 duple\nn1\t0\t1\t60\t-\t-\t-\t0\nn1\t1\t1\t60\t-\t-\t-\t0\n";
        assert!(matches!(parse_score(dup), Err(Error::Validation(_))));
        let no_meter = "n1\t0\t1\t60\t-\t-\t-\t0\n";
        assert!(matches!(parse_score(no_meter), Err(Error::Validation(_))));
        let bad = "#meter 0 4 4 duple\n\nn1\t0\tx\t60\t-\t-\t-\t0\n";
        match parse_score(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let misspelled = "#meter 0 4 4 duple\nn1\t0\t1\t61\tC\t0\t4\t0\n";
        assert!(matches!(parse_score(misspelled), Err(Error::Validation(_))));
        let late_meter = "#meter 1 4 4 duple\nn1\t1\t1\t60\t-\t-\t-\t0\n";
        assert!(parse_score(late_meter).is_err());
    }

    #[test]
    fn performance_matching() {
        let s = parse_score(TRIAD).unwrap();
        let full = "n1\t0\t0.5\t60\nn2\t0.01\t0.5\t70\nn3\t0.02\t0.5\t80\n";
        let p = parse_performance(full, &s).unwrap();
        assert_eq!(p.notes.len(), 3);
        assert!(p.missing.is_empty());

        let partial = "n1\t0\t0.5\t60\nn3\t0.02\t0.5\t80\n";
        let p = parse_performance(partial, &s).unwrap();
        assert_eq!(p.notes.len(), 2);
        assert_eq!(p.missing, vec!["n2".to_string()]);

        let unknown = "n99\t0\t0.5\t60\n";
        let err = parse_performance(unknown, &s).unwrap_err();
        assert!(err.to_string().contains("n99"));

        assert!(parse_performance("n1\t0\t0.5\t0\n", &s).is_err());
        assert!(parse_performance("n1\t0\t0.5\t128\n", &s).is_err());
        assert!(parse_performance("n1\t0\t0.5\t60\nn1\t0.1\t0.5\t60\n", &s).is_err());
    }

    #[test]
    fn grouping() {
        let text = "#meter 0 4 4 duple\n\
            a\t0\t1\t60\t-\t-\t-\t0\n\
            b\t0\t1\t64\t-\t-\t-\t0\n\
            c\t0.0000005\t1\t67\t-\t-\t-\t0\n\
            d\t1\t1\t72\t-\t-\t-\t0\n";
        let s = parse_score(text).unwrap();
        let frames = group_onsets(&s);
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].note_ids.len(), 3);
        assert_eq!(frames[1].note_ids, vec!["d".to_string()]);
        assert_eq!(frames[1].index, 1);

        let empty = Score::new(vec![], s.meter_map.clone(), None).unwrap();
        assert!(group_onsets(&empty).is_empty());
    }
}
