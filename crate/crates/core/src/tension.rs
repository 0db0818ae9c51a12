//! Cloud diameter, cloud momentum and tensile strain per onset frame.
//!
//! Each frame's segment is the window `[beat, beat + width)`; notes sounding
//! in it contribute their spelled pitch weighted by overlap duration. All
//! three distances are divided by the enharmonic unit of the spiral.

use std::fmt::Write as _;

use crate::csv_io::{comment_block, fmt_num};
use crate::error::{domain, Result};
use crate::spiral_array::{
    center_of_effect, distance, enharmonic_unit, key_coe, pitch_position, Cloud, Key, Mode, SpiralParams, SpiralPoint,
};
use crate::symbolic_io::{group_onsets, OnsetFrame, Score};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    pub width_beats: f64,
    /// Count notes that started earlier and are still sounding.
    pub include_held: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { width_beats: 1.0, include_held: true }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_beats.is_finite() && self.width_beats > 0.0) {
            return Err(domain(format!("window width must be > 0, got {}", self.width_beats)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!("window.width_beats={}\nwindow.include_held={}\n", self.width_beats, self.include_held)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensionFrame {
    pub frame_index: usize,
    pub beat: f64,
    pub t_cd: f64,
    pub t_cm: f64,
    pub t_ts: f64,
}

/// Collects the notes sounding in the frame's window into a cloud.
pub fn make_cloud(score: &Score, frame: &OnsetFrame, cfg: &WindowConfig, params: &SpiralParams) -> Result<Cloud> {
    let start = frame.beat;
    let end = start + cfg.width_beats;
    let mut members = Vec::new();
    for note in &score.notes {
        if note.onset >= end {
            break;
        }
        let starts_inside = note.onset >= start - crate::symbolic_io::ONSET_TOLERANCE;
        if !cfg.include_held && !starts_inside {
            continue;
        }
        let overlap = note.end().min(end) - note.onset.max(start);
        if overlap > 0.0 {
            members.push((score.tpc_of(note), overlap));
        }
    }
    if members.is_empty() {
        // only reachable with a degenerate window; fall back to the frame's notes
        members = frame
            .note_indices
            .iter()
            .map(|&i| {
                let n = &score.notes[i];
                (score.tpc_of(n), n.duration.min(cfg.width_beats))
            })
            .collect();
    }
    Cloud::new(members, params)
}

/// Largest pairwise distance among the cloud's pitches, in enharmonic units.
pub fn cloud_diameter(cloud: &Cloud, params: &SpiralParams) -> f64 {
    let m = cloud.members();
    let mut best: f64 = 0.0;
    for (i, &(a, _)) in m.iter().enumerate() {
        for &(b, _) in &m[i + 1..] {
            best = best.max(distance(pitch_position(a, params), pitch_position(b, params)));
        }
    }
    best / enharmonic_unit(params)
}

/// Distance between consecutive clouds' centers; zero for the first frame.
pub fn cloud_momentum(prev: Option<&Cloud>, cur: &Cloud, params: &SpiralParams) -> f64 {
    match prev {
        Some(p) => distance(p.coe(), cur.coe()) / enharmonic_unit(params),
        None => 0.0,
    }
}

/// Distance from the cloud's center to the key's center.
pub fn tensile_strain(cloud: &Cloud, key_center: SpiralPoint, params: &SpiralParams) -> f64 {
    distance(cloud.coe(), key_center) / enharmonic_unit(params)
}

/// Whole-piece key estimate: the key (tonic in -6..=6, either mode) whose
/// center is nearest the duration-weighted center of all notes. Ties keep
/// the earlier candidate, iterating tonics upward with major first.
pub fn estimate_key(score: &Score, params: &SpiralParams) -> Result<Key> {
    let members: Vec<(i32, f64)> = score.notes.iter().map(|n| (score.tpc_of(n), n.duration)).collect();
    let center = center_of_effect(&members, params)?;
    let mut best: Option<(f64, Key)> = None;
    for tonic in -6..=6 {
        for mode in [Mode::Major, Mode::Minor] {
            let d = distance(center, key_coe(tonic, mode, params));
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, Key { tonic, mode }));
            }
        }
    }
    Ok(best.expect("candidate set is non-empty").1)
}

/// Computes the three tension features for every onset frame.
pub fn tension_track(score: &Score, cfg: &WindowConfig, params: &SpiralParams) -> Result<Vec<TensionFrame>> {
    cfg.validate()?;
    params.validate()?;
    let frames = group_onsets(score);
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let key = match score.key {
        Some(k) => k,
        None => {
            let k = estimate_key(score, params)?;
            log::info!("no key given; estimated tonic tpc {} {}", k.tonic, k.mode);
            k
        }
    };
    let key_center = key_coe(key.tonic, key.mode, params);
    let mut prev: Option<Cloud> = None;
    let mut out = Vec::with_capacity(frames.len());
    for frame in &frames {
        let cloud = make_cloud(score, frame, cfg, params)?;
        out.push(TensionFrame {
            frame_index: frame.index,
            beat: frame.beat,
            t_cd: cloud_diameter(&cloud, params),
            t_cm: cloud_momentum(prev.as_ref(), &cloud, params),
            t_ts: tensile_strain(&cloud, key_center, params),
        });
        prev = Some(cloud);
    }
    Ok(out)
}

/// `frame,beat,t_cd,t_cm,t_ts` with the configuration in `#` lines.
pub fn tension_csv(
    track: &[TensionFrame],
    cfg: &WindowConfig,
    params: &SpiralParams,
    extra_header: &[String],
) -> String {
    let mut meta: Vec<String> = extra_header.to_vec();
    meta.extend(params.to_kv().lines().map(str::to_string));
    meta.extend(cfg.to_kv().lines().map(str::to_string));
    let mut out = comment_block(&meta);
    out.push_str("frame,beat,t_cd,t_cm,t_ts\n");
    for t in track {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            t.frame_index,
            fmt_num(t.beat),
            fmt_num(t.t_cd),
            fmt_num(t.t_cm),
            fmt_num(t.t_ts)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic_io::{parse_score, MeterClass, MeterSegment, ScoreNote, SpelledPitch};

    fn note(id: &str, onset: f64, dur: f64, tpc: i32, midi: i32) -> ScoreNote {
        ScoreNote {
            id: id.into(),
            onset,
            duration: dur,
            midi_pitch: midi as u8,
            spelled: Some(SpelledPitch::from_tpc(tpc, midi).unwrap()),
            is_melody: false,
        }
    }

    fn score(notes: Vec<ScoreNote>, key: Option<Key>) -> Score {
        let meter = vec![MeterSegment { start_beat: 0.0, beats_per_bar: 4.0, beat_unit: 4, class: MeterClass::Duple }];
        Score::new(notes, meter, key).unwrap()
    }

    const C_MAJOR: Option<Key> = Some(Key { tonic: 0, mode: Mode::Major });

    #[test]
    fn cloud_windows() {
        let p = SpiralParams::default();
        let cfg = WindowConfig::default();
        let s = score(vec![note("a", 0.0, 4.0, 0, 60)], C_MAJOR);
        let f = &group_onsets(&s)[0];
        let c = make_cloud(&s, f, &cfg, &p).unwrap();
        assert_eq!(c.members(), &[(0, 1.0)]);

        let s =
            score(vec![note("c", 0.0, 1.0, 0, 60), note("e", 0.0, 1.0, 4, 64), note("g", 0.0, 1.0, 1, 67)], C_MAJOR);
        let c = make_cloud(&s, &group_onsets(&s)[0], &cfg, &p).unwrap();
        assert_eq!(c.members().len(), 3);
        assert!(c.members().iter().all(|&(_, w)| w == 1.0));

        // bass held from beat 0 to 1.5, frame at beat 1 with width 1: overlap [1, 1.5)
        let s = score(vec![note("bass", 0.0, 1.5, -1, 41), note("top", 1.0, 1.0, 4, 76)], C_MAJOR);
        let frames = group_onsets(&s);
        let c = make_cloud(&s, &frames[1], &cfg, &p).unwrap();
        let overlap = 1.5f64.min(2.0) - 0.0f64.max(1.0);
        assert_eq!(c.members(), &[(-1, overlap), (4, 1.0)]);
        let onset_only = WindowConfig { include_held: false, ..cfg };
        let c = make_cloud(&s, &frames[1], &onset_only, &p).unwrap();
        assert_eq!(c.members(), &[(4, 1.0)]);
    }

    #[test]
    fn diameter() {
        let p = SpiralParams::default();
        assert_eq!(cloud_diameter(&Cloud::new([(3, 1.0)], &p).unwrap(), &p), 0.0);
        assert_eq!(cloud_diameter(&Cloud::new([(0, 1.0), (0, 2.0)], &p).unwrap(), &p), 0.0);
        // brute force over the three pairs of C, E, G
        let pos = |k: i32| {
            let t = k as f64 * std::f64::consts::FRAC_PI_2;
            (t.sin(), t.cos(), k as f64 * p.h)
        };
        let d = |a: i32, b: i32| {
            let (x1, y1, z1) = pos(a);
            let (x2, y2, z2) = pos(b);
            ((x1 - x2).powi(2) + (y1 - y2).powi(2) + (z1 - z2).powi(2)).sqrt()
        };
        let expect = d(0, 4).max(d(0, 1)).max(d(1, 4)) / (12.0 * p.h);
        let got = cloud_diameter(&Cloud::new([(0, 1.0), (4, 1.0), (1, 1.0)], &p).unwrap(), &p);
        assert!((got - expect).abs() < 1e-12, "{got} {expect}");
    }

    #[test]
    fn momentum() {
        let p = SpiralParams::default();
        let c = Cloud::new([(0, 1.0)], &p).unwrap();
        let g = Cloud::new([(1, 1.0)], &p).unwrap();
        assert_eq!(cloud_momentum(None, &c, &p), 0.0);
        assert_eq!(cloud_momentum(Some(&c), &c, &p), 0.0);
        let expect = (2.0 * p.r * p.r + p.h * p.h).sqrt() / (12.0 * p.h);
        assert!((cloud_momentum(Some(&c), &g, &p) - expect).abs() < 1e-12);
    }

    #[test]
    fn strain() {
        let p = SpiralParams::default();
        let key = key_coe(0, Mode::Major, &p);
        let c = Cloud::new([(0, 1.0)], &p).unwrap();
        // C at (0, 1, 0)
        let expect = ((key.x).powi(2) + (key.y - 1.0).powi(2) + key.z.powi(2)).sqrt() / (12.0 * p.h);
        assert!((tensile_strain(&c, key, &p) - expect).abs() < 1e-12);

        // cloud exactly at the key center: the three key triads' pitches with
        // their combined weights
        let [w1, w2, w3] = p.chord_weights;
        let [k1, k2, k3] = p.key_weights;
        let mut members = Vec::new();
        for (root, third, k) in [(0, 4, k1), (1, 5, k2), (-1, 3, k3)] {
            members.extend([(root, k * w1), (root + 1, k * w2), (third, k * w3)]);
        }
        let at_key = Cloud::new(members, &p).unwrap();
        assert!(tensile_strain(&at_key, key, &p) < 1e-12);

        let moved = Cloud::new([(3, 1.0)], &p).unwrap();
        let a = tensile_strain(&c, key_coe(0, Mode::Minor, &p), &p);
        let b = tensile_strain(&moved, key_coe(3, Mode::Minor, &p), &p);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn tracks() {
        let p = SpiralParams::default();
        let cfg = WindowConfig::default();
        let single = score(vec![note("a", 0.0, 1.0, 0, 60), note("b", 0.0, 1.0, 4, 64)], C_MAJOR);
        let t = tension_track(&single, &cfg, &p).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].t_cm, 0.0);

        let mut notes = Vec::new();
        for i in 0..5 {
            let b = i as f64;
            notes.push(note(&format!("c{i}"), b, 1.0, 0, 60));
            notes.push(note(&format!("e{i}"), b, 1.0, 4, 64));
            notes.push(note(&format!("g{i}"), b, 1.0, 1, 67));
        }
        let t = tension_track(&score(notes, C_MAJOR), &cfg, &p).unwrap();
        assert_eq!(t.len(), 5);
        assert!(t.iter().all(|f| f.t_cm == 0.0 && f.t_cd == t[0].t_cd));

        let empty = score(vec![], None);
        assert!(tension_track(&empty, &cfg, &p).unwrap().is_empty());
    }

    #[test]
    fn c_to_g_progression_composes_per_frame_ops() {
        let p = SpiralParams::default();
        let cfg = WindowConfig::default();
        let s = score(
            vec![
                note("c", 0.0, 1.0, 0, 60),
                note("e", 0.0, 1.0, 4, 64),
                note("g", 0.0, 1.0, 1, 67),
                note("g2", 1.0, 1.0, 1, 67),
                note("b", 1.0, 1.0, 5, 71),
                note("d", 1.0, 1.0, 2, 74),
            ],
            C_MAJOR,
        );
        let t = tension_track(&s, &cfg, &p).unwrap();
        let c_chord = Cloud::new([(0, 1.0), (4, 1.0), (1, 1.0)], &p).unwrap();
        let g_chord = Cloud::new([(1, 1.0), (5, 1.0), (2, 1.0)], &p).unwrap();
        let key = key_coe(0, Mode::Major, &p);
        let unit = 12.0 * p.h;
        assert!((t[0].t_cd - cloud_diameter(&c_chord, &p)).abs() < 1e-12);
        assert!((t[1].t_cd - cloud_diameter(&g_chord, &p)).abs() < 1e-12);
        assert_eq!(t[0].t_cm, 0.0);
        assert!((t[1].t_cm - distance(c_chord.coe(), g_chord.coe()) / unit).abs() < 1e-12);
        assert!((t[0].t_ts - distance(c_chord.coe(), key) / unit).abs() < 1e-12);
        assert!((t[1].t_ts - distance(g_chord.coe(), key) / unit).abs() < 1e-12);
    }

    #[test]
    fn key_estimate_finds_written_key() {
        let p = SpiralParams::default();
        let text = "#meter 0 4 4 duple\n\
            a\t0\t2\t60\tC\t0\t4\t0\nb\t0\t2\t64\tE\t0\t4\t0\nc\t0\t2\t67\tG\t0\t4\t0\n\
            d\t2\t1\t65\tF\t0\t4\t0\ne\t2\t1\t69\tA\t0\t4\t0\nf\t3\t1\t67\tG\t0\t4\t0\n\
            g\t3\t1\t71\tB\t0\t4\t0\nh\t4\t2\t60\tC\t0\t4\t0\n";
        let s = parse_score(text).unwrap();
        assert_eq!(estimate_key(&s, &p).unwrap(), Key { tonic: 0, mode: Mode::Major });
        assert_eq!(tension_track(&s, &WindowConfig::default(), &p).unwrap().len(), 4);
    }

    #[test]
    fn csv_layout() {
        let p = SpiralParams::default();
        let cfg = WindowConfig::default();
        let s = score(vec![note("a", 0.0, 1.0, 0, 60)], C_MAJOR);
        let csv = tension_csv(&tension_track(&s, &cfg, &p).unwrap(), &cfg, &p, &[]);
        assert!(csv.contains("# spiral.h="));
        assert!(csv.contains("# window.width_beats=1"));
        assert!(csv.contains("frame,beat,t_cd,t_cm,t_ts\n0,0,0,0,"));
    }
}
