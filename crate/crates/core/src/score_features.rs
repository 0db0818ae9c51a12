//! Pitch (P) and metrical (M) descriptors per onset frame, and assembly of
//! feature matrices for any subset of the P, M and T groups.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::csv_io::{comment_block, fmt_num, parse_num, read_table};
use crate::error::{domain, validation, Result};
use crate::symbolic_io::{MeterClass, OnsetFrame, Score, ONSET_TOLERANCE};
use crate::tension::TensionFrame;

pub const PITCH_FEATURES: [&str; 6] = ["pitch_h", "pitch_l", "pitch_m", "vic1", "vic2", "vic3"];
pub const METRICAL_FEATURES: [&str; 4] = ["b_phi", "b_d", "b_s", "b_w"];
pub const TENSION_FEATURES: [&str; 3] = ["t_cd", "t_cm", "t_ts"];

/// Every feature in canonical column order.
pub fn canonical_features() -> Vec<&'static str> {
    PITCH_FEATURES.iter().chain(&METRICAL_FEATURES).chain(&TENSION_FEATURES).copied().collect()
}

/// A subset of the pitch, metrical and tension groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Groups {
    pub pitch: bool,
    pub metrical: bool,
    pub tension: bool,
}

impl Groups {
    pub const NONE: Groups = Groups { pitch: false, metrical: false, tension: false };
    pub const ALL: Groups = Groups { pitch: true, metrical: true, tension: true };

    pub fn with_tension(self) -> Groups {
        Groups { tension: true, ..self }
    }

    pub fn feature_names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.pitch {
            v.extend(PITCH_FEATURES);
        }
        if self.metrical {
            v.extend(METRICAL_FEATURES);
        }
        if self.tension {
            v.extend(TENSION_FEATURES);
        }
        v
    }
}

impl fmt::Display for Groups {
    /// `P+M+T` style label; the empty set is `none`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.pitch, "P"), (self.metrical, "M"), (self.tension, "T")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, l)| *l)
            .collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

impl FromStr for Groups {
    type Err = crate::Error;

    /// Accepts `P,M,T`, `P+M`, `none` or an empty string.
    fn from_str(s: &str) -> Result<Self> {
        let mut g = Groups::NONE;
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(g);
        }
        for part in s.split([',', '+']) {
            match part.trim() {
                "P" => g.pitch = true,
                "M" => g.metrical = true,
                "T" => g.tension = true,
                other => return Err(domain(format!("unknown feature group {other:?}"))),
            }
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub frame_index: usize,
    pub beat: f64,
    pub values: Vec<f64>,
}

/// Named feature columns over a piece's frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r.values[j]).collect())
    }

    /// Keeps the named columns in the given order.
    pub fn select(&self, names: &[String]) -> Result<FeatureMatrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| validation(format!("unknown feature {n:?}"))))
            .collect::<Result<_>>()?;
        Ok(FeatureMatrix {
            names: names.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|r| FeatureRow {
                    frame_index: r.frame_index,
                    beat: r.beat,
                    values: idx.iter().map(|&j| r.values[j]).collect(),
                })
                .collect(),
        })
    }

    /// Keeps only rows whose frame index is listed (in that order).
    pub fn retain_frames(&self, frame_indices: &[usize]) -> Result<FeatureMatrix> {
        let mut rows = Vec::with_capacity(frame_indices.len());
        let mut it = self.rows.iter();
        for &fi in frame_indices {
            let row =
                it.find(|r| r.frame_index == fi).ok_or_else(|| validation(format!("no feature row for frame {fi}")))?;
            rows.push(row.clone());
        }
        Ok(FeatureMatrix { names: self.names.clone(), rows })
    }

    pub fn to_csv(&self, meta: &[String]) -> String {
        let mut out = comment_block(meta);
        out.push_str("frame,beat");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.frame_index, fmt_num(r.beat));
            for v in &r.values {
                let _ = write!(out, ",{}", fmt_num(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<FeatureMatrix> {
        let t = read_table(text)?;
        if t.header.len() < 2 || t.header[0] != "frame" || t.header[1] != "beat" {
            return Err(validation("feature CSV must start with frame,beat columns"));
        }
        let names = t.header[2..].to_vec();
        let rows = t
            .rows
            .iter()
            .map(|r| {
                Ok(FeatureRow {
                    frame_index: r[0].trim().parse().map_err(|_| validation(format!("invalid frame {:?}", r[0])))?,
                    beat: parse_num(&r[1], "beat")?,
                    values: r[2..].iter().zip(&names).map(|(v, n)| parse_num(v, n)).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(FeatureMatrix { names, rows })
    }
}

fn frame_pitches<'a>(frame: &'a OnsetFrame, score: &'a Score) -> impl Iterator<Item = u8> + 'a {
    frame.note_indices.iter().map(move |&i| score.notes[i].midi_pitch)
}

/// Highest, lowest and melody pitch of the frame, each divided by 127. The
/// melody value is 0 when no note carries the melody flag.
pub fn pitch_features(frame: &OnsetFrame, score: &Score) -> (f64, f64, f64) {
    let hi = frame_pitches(frame, score).max().unwrap_or(0);
    let lo = frame_pitches(frame, score).min().unwrap_or(0);
    let melody = frame
        .note_indices
        .iter()
        .map(|&i| &score.notes[i])
        .filter(|n| n.is_melody)
        .map(|n| n.midi_pitch)
        .max()
        .unwrap_or(0);
    (hi as f64 / 127.0, lo as f64 / 127.0, melody as f64 / 127.0)
}

/// Up to three distinct interval classes above the bass, smallest first,
/// each divided by 11 and zero-padded.
pub fn vertical_intervals(frame: &OnsetFrame, score: &Score) -> (f64, f64, f64) {
    let Some(bass) = frame_pitches(frame, score).min() else {
        return (0.0, 0.0, 0.0);
    };
    let mut classes: Vec<u8> = frame_pitches(frame, score).map(|p| (p - bass) % 12).filter(|&ic| ic != 0).collect();
    classes.sort_unstable();
    classes.dedup();
    let v = |i: usize| classes.get(i).map_or(0.0, |&c| c as f64 / 11.0);
    (v(0), v(1), v(2))
}

/// Position within the bar and the one-hot metrical strength
/// `(b_phi, b_d, b_s, b_w)`. Bars are counted from the start of the active
/// meter segment.
pub fn metrical_features(frame: &OnsetFrame, score: &Score) -> Result<(f64, f64, f64, f64)> {
    let meter = score.meter_at(frame.beat)?;
    let bar = meter.beats_per_bar;
    let mut pos = (frame.beat - meter.start_beat).rem_euclid(bar);
    if pos < ONSET_TOLERANCE || bar - pos < ONSET_TOLERANCE {
        pos = 0.0;
    }
    let downbeat = pos == 0.0;
    let secondary = !downbeat && meter.class == MeterClass::Duple && (pos - bar / 2.0).abs() < ONSET_TOLERANCE;
    let b_phi = pos / bar;
    Ok(match (downbeat, secondary) {
        (true, _) => (b_phi, 1.0, 0.0, 0.0),
        (false, true) => (b_phi, 0.0, 1.0, 0.0),
        _ => (b_phi, 0.0, 0.0, 1.0),
    })
}

/// Builds one row per frame with the requested groups in canonical order.
/// Omitted groups contribute no columns.
pub fn assemble_features(
    score: &Score,
    frames: &[OnsetFrame],
    tension: Option<&[TensionFrame]>,
    groups: Groups,
) -> Result<FeatureMatrix> {
    let tension = if groups.tension {
        let t = tension.ok_or_else(|| validation("tension features requested without a tension track"))?;
        if t.len() != frames.len() {
            return Err(validation(format!("tension track has {} frames but the score has {}", t.len(), frames.len())));
        }
        Some(t)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let mut values = Vec::with_capacity(13);
        if groups.pitch {
            let (h, l, m) = pitch_features(frame, score);
            let (v1, v2, v3) = vertical_intervals(frame, score);
            values.extend([h, l, m, v1, v2, v3]);
        }
        if groups.metrical {
            let (phi, d, s, w) = metrical_features(frame, score)?;
            values.extend([phi, d, s, w]);
        }
        if let Some(t) = tension {
            let tf = &t[i];
            if tf.frame_index != frame.index {
                return Err(validation(format!(
                    "tension frame {} misaligned with onset frame {}",
                    tf.frame_index, frame.index
                )));
            }
            values.extend([tf.t_cd, tf.t_cm, tf.t_ts]);
        }
        rows.push(FeatureRow { frame_index: frame.index, beat: frame.beat, values });
    }
    Ok(FeatureMatrix { names: groups.feature_names().into_iter().map(String::from).collect(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic_io::{group_onsets, parse_score};

    fn frames_of(text: &str) -> (Score, Vec<OnsetFrame>) {
        let s = parse_score(text).unwrap();
        let f = group_onsets(&s);
        (s, f)
    }

    const TRIAD: &str = "#meter 0 4 4 duple\n\
        c\t0\t1\t60\tC\t0\t4\t0\ne\t0\t1\t64\tE\t0\t4\t0\ng\t0\t1\t67\tG\t0\t4\t0\n";

    #[test]
    fn pitch() {
        let (s, f) = frames_of("#meter 0 4 4 duple\nc\t0\t1\t60\t-\t-\t-\t1\n");
        assert_eq!(pitch_features(&f[0], &s), (60.0 / 127.0, 60.0 / 127.0, 60.0 / 127.0));
        let (s, f) = frames_of(TRIAD);
        assert_eq!(pitch_features(&f[0], &s), (67.0 / 127.0, 60.0 / 127.0, 0.0));
        let (s, f) = frames_of(
            "#meter 0 4 4 duple\na\t0\t1\t60\t-\t-\t-\t1\nb\t0\t1\t72\t-\t-\t-\t1\nc\t0\t1\t76\t-\t-\t-\t0\n",
        );
        assert_eq!(pitch_features(&f[0], &s).2, 72.0 / 127.0);
    }

    #[test]
    fn intervals() {
        let (s, f) = frames_of(TRIAD);
        assert_eq!(vertical_intervals(&f[0], &s), (4.0 / 11.0, 7.0 / 11.0, 0.0));
        let (s, f) = frames_of("#meter 0 4 4 duple\nc\t0\t1\t60\t-\t-\t-\t0\n");
        assert_eq!(vertical_intervals(&f[0], &s), (0.0, 0.0, 0.0));
        let (s, f) = frames_of("#meter 0 4 4 duple\nc\t0\t1\t60\t-\t-\t-\t0\nd\t0\t1\t72\t-\t-\t-\t0\n");
        assert_eq!(vertical_intervals(&f[0], &s), (0.0, 0.0, 0.0));
        // C E G Bb D (E an octave up repeats a class): 2, 4, 7, 10 -> smallest three
        let (s, f) = frames_of(
            "#meter 0 4 4 duple\na\t0\t1\t48\t-\t-\t-\t0\nb\t0\t1\t64\t-\t-\t-\t0\nc\t0\t1\t67\t-\t-\t-\t0\n\
             d\t0\t1\t70\t-\t-\t-\t0\ne\t0\t1\t74\t-\t-\t-\t0\nf\t0\t1\t76\t-\t-\t-\t0\n",
        );
        assert_eq!(vertical_intervals(&f[0], &s), (2.0 / 11.0, 4.0 / 11.0, 7.0 / 11.0));
    }

    #[test]
    fn metrical() {
        let (s, f) = frames_of(
            "#meter 0 4 4 duple\na\t0\t1\t60\t-\t-\t-\t0\nb\t1\t1\t60\t-\t-\t-\t0\nc\t2\t1\t60\t-\t-\t-\t0\nd\t4.0000001\t1\t60\t-\t-\t-\t0\n",
        );
        assert_eq!(metrical_features(&f[0], &s).unwrap(), (0.0, 1.0, 0.0, 0.0));
        assert_eq!(metrical_features(&f[1], &s).unwrap(), (0.25, 0.0, 0.0, 1.0));
        assert_eq!(metrical_features(&f[2], &s).unwrap(), (0.5, 0.0, 1.0, 0.0));
        assert_eq!(metrical_features(&f[3], &s).unwrap(), (0.0, 1.0, 0.0, 0.0));

        // 6/8 counted in eighths: the secondary strong beat is eighth 4
        let (s, f) = frames_of("#meter 0 6 8 duple\na\t3\t1\t60\t-\t-\t-\t0\nb\t7\t1\t60\t-\t-\t-\t0\n");
        assert_eq!(metrical_features(&f[0], &s).unwrap(), (0.5, 0.0, 1.0, 0.0));
        assert_eq!(metrical_features(&f[1], &s).unwrap().3, 1.0);

        // 3/4 has no secondary strong beat; a meter change restarts bar counting
        let (s, f) = frames_of(
            "#meter 0 3 4 triple\n#meter 3 2 4 duple\na\t1.5\t1\t60\t-\t-\t-\t0\nb\t4\t1\t60\t-\t-\t-\t0\nc\t5\t1\t60\t-\t-\t-\t0\n",
        );
        assert_eq!(metrical_features(&f[0], &s).unwrap(), (0.5, 0.0, 0.0, 1.0));
        assert_eq!(metrical_features(&f[1], &s).unwrap(), (0.5, 0.0, 1.0, 0.0));
        assert_eq!(metrical_features(&f[2], &s).unwrap(), (0.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn assembly_widths() {
        let (s, f) = frames_of(TRIAD);
        let t = crate::tension::tension_track(&s, &Default::default(), &Default::default()).unwrap();
        assert_eq!(assemble_features(&s, &f, None, Groups::NONE).unwrap().width(), 0);
        assert_eq!(assemble_features(&s, &f, None, "P".parse().unwrap()).unwrap().width(), 6);
        let all = assemble_features(&s, &f, Some(&t), Groups::ALL).unwrap();
        assert_eq!(all.names, canonical_features());
        assert_eq!(all.rows[0].values.len(), 13);
        assert!(assemble_features(&s, &f, Some(&[]), Groups::ALL).is_err());
        assert!(assemble_features(&s, &f, None, Groups::ALL).is_err());
    }

    #[test]
    fn group_labels() {
        assert_eq!(Groups::NONE.to_string(), "none");
        assert_eq!("P,T".parse::<Groups>().unwrap().to_string(), "P+T");
        assert_eq!("P+M+T".parse::<Groups>().unwrap(), Groups::ALL);
        assert!("X".parse::<Groups>().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let (s, f) = frames_of(TRIAD);
        let t = crate::tension::tension_track(&s, &Default::default(), &Default::default()).unwrap();
        let m = assemble_features(&s, &f, Some(&t), Groups::ALL).unwrap();
        assert_eq!(FeatureMatrix::from_csv(&m.to_csv(&["groups=P+M+T".into()])).unwrap(), m);
    }
}
