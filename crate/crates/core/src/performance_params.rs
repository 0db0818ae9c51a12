//! Expressive tempo and dynamics targets: beat period ratio (BPR), its
//! derivative, normalized peak velocity (VEL) and its derivative.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::csv_io::{comment_block, fmt_num, parse_num, read_table};
use crate::error::{domain, validation, Result};
use crate::symbolic_io::{group_onsets, OnsetFrame, Performance, Score};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Bpr,
    DBpr,
    Vel,
    DVel,
}

impl Target {
    pub const ALL: [Target; 4] = [Target::Bpr, Target::DBpr, Target::Vel, Target::DVel];

    pub fn name(self) -> &'static str {
        match self {
            Target::Bpr => "bpr",
            Target::DBpr => "d_bpr",
            Target::Vel => "vel",
            Target::DVel => "d_vel",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| domain(format!("unknown target {s:?} (expected bpr, d_bpr, vel or d_vel)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRow {
    pub frame_index: usize,
    pub beat: f64,
    pub bpr: f64,
    pub d_bpr: f64,
    pub vel: f64,
    pub d_vel: f64,
}

impl TargetRow {
    pub fn get(&self, t: Target) -> f64 {
        match t {
            Target::Bpr => self.bpr,
            Target::DBpr => self.d_bpr,
            Target::Vel => self.vel,
            Target::DVel => self.d_vel,
        }
    }
}

/// Frames that kept at least one performed note, with the matched notes'
/// positions in `Performance::notes`.
#[derive(Debug, Clone)]
pub struct MatchedFrame<'a> {
    pub frame: &'a OnsetFrame,
    pub performed: Vec<usize>,
}

/// Pairs frames with their performed notes; frames whose notes were all
/// deleted in the alignment are dropped with a warning.
pub fn match_frames<'a>(frames: &'a [OnsetFrame], performance: &Performance) -> Vec<MatchedFrame<'a>> {
    let by_id: HashMap<&str, usize> =
        performance.notes.iter().enumerate().map(|(i, n)| (n.score_id.as_str(), i)).collect();
    let mut out = Vec::with_capacity(frames.len());
    for frame in frames {
        let performed: Vec<usize> = frame.note_ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect();
        if performed.is_empty() {
            log::warn!("frame {} at beat {} has no performed notes; dropped", frame.index, frame.beat);
        } else {
            out.push(MatchedFrame { frame, performed });
        }
    }
    out
}

/// Mean performed onset per frame. Averaged onsets must strictly increase.
pub fn average_onsets(performance: &Performance, frames: &[MatchedFrame<'_>]) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = Vec::with_capacity(frames.len());
    for mf in frames {
        let sum: f64 = mf.performed.iter().map(|&i| performance.notes[i].onset_sec).sum();
        let mean = sum / mf.performed.len() as f64;
        if let Some(&last) = out.last() {
            if mean <= last {
                return Err(validation(format!(
                    "averaged onset {mean} s of frame {} does not follow the previous frame ({last} s)",
                    mf.frame.index
                )));
            }
        }
        out.push(mean);
    }
    Ok(out)
}

/// Local beat period by forward difference (the last frame repeats its
/// predecessor), divided by the unweighted mean over frames.
pub fn compute_bpr(onsets_sec: &[f64], beats: &[f64]) -> Result<Vec<f64>> {
    if onsets_sec.len() != beats.len() {
        return Err(domain("onset and beat lists differ in length"));
    }
    let n = onsets_sec.len();
    if n < 2 {
        return Err(domain(format!("beat period ratio needs at least 2 frames, got {n}")));
    }
    let mut bp: Vec<f64> = (0..n - 1)
        .map(|i| {
            let gap = beats[i + 1] - beats[i];
            if gap <= 0.0 {
                return Err(domain(format!("beats must strictly increase (frame {})", i + 1)));
            }
            Ok((onsets_sec[i + 1] - onsets_sec[i]) / gap)
        })
        .collect::<Result<_>>()?;
    bp.push(bp[n - 2]);
    let mean = bp.iter().sum::<f64>() / n as f64;
    Ok(bp.into_iter().map(|b| b / mean).collect())
}

/// Backward difference with respect to score position; the first value is 0.
pub fn derivative(series: &[f64], beats: &[f64]) -> Result<Vec<f64>> {
    if series.len() != beats.len() {
        return Err(domain("series and beat lists differ in length"));
    }
    let mut out = Vec::with_capacity(series.len());
    for i in 0..series.len() {
        out.push(if i == 0 { 0.0 } else { (series[i] - series[i - 1]) / (beats[i] - beats[i - 1]) });
    }
    Ok(out)
}

/// Maximum performed velocity per frame over 127.
pub fn compute_vel(performance: &Performance, frames: &[MatchedFrame<'_>]) -> Vec<f64> {
    frames
        .iter()
        .map(|mf| {
            let max = mf.performed.iter().map(|&i| performance.notes[i].velocity).max().unwrap_or(0);
            max as f64 / 127.0
        })
        .collect()
}

/// All four targets for the frames that have performed notes.
pub fn targets(score: &Score, performance: &Performance) -> Result<Vec<TargetRow>> {
    let frames = group_onsets(score);
    let matched = match_frames(&frames, performance);
    let beats: Vec<f64> = matched.iter().map(|m| m.frame.beat).collect();
    let onsets = average_onsets(performance, &matched)?;
    let bpr = compute_bpr(&onsets, &beats)?;
    let d_bpr = derivative(&bpr, &beats)?;
    let vel = compute_vel(performance, &matched);
    let d_vel = derivative(&vel, &beats)?;
    Ok(matched
        .iter()
        .enumerate()
        .map(|(i, m)| TargetRow {
            frame_index: m.frame.index,
            beat: m.frame.beat,
            bpr: bpr[i],
            d_bpr: d_bpr[i],
            vel: vel[i],
            d_vel: d_vel[i],
        })
        .collect())
}

pub fn targets_csv(rows: &[TargetRow], meta: &[String]) -> String {
    let mut out = comment_block(meta);
    out.push_str("frame,beat,bpr,d_bpr,vel,d_vel\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.frame_index,
            fmt_num(r.beat),
            fmt_num(r.bpr),
            fmt_num(r.d_bpr),
            fmt_num(r.vel),
            fmt_num(r.d_vel)
        );
    }
    out
}

pub fn read_targets_csv(text: &str) -> Result<Vec<TargetRow>> {
    let t = read_table(text)?;
    let cols: Vec<usize> =
        ["frame", "beat", "bpr", "d_bpr", "vel", "d_vel"].iter().map(|c| t.column(c)).collect::<Result<_>>()?;
    t.rows
        .iter()
        .map(|r| {
            let num = |k: usize, name: &str| parse_num(&r[cols[k]], name);
            Ok(TargetRow {
                frame_index: r[cols[0]]
                    .trim()
                    .parse()
                    .map_err(|_| validation(format!("invalid frame {:?}", r[cols[0]])))?,
                beat: num(1, "beat")?,
                bpr: num(2, "bpr")?,
                d_bpr: num(3, "d_bpr")?,
                vel: num(4, "vel")?,
                d_vel: num(5, "d_vel")?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic_io::{parse_performance, parse_score};
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    const SCORE: &str = "#meter 0 4 4 duple\n\
        a\t0\t1\t60\t-\t-\t-\t0\nb\t0\t1\t64\t-\t-\t-\t0\n\
        c\t1\t1\t62\t-\t-\t-\t0\nd\t2\t1\t64\t-\t-\t-\t0\n";

    #[test]
    fn onset_averaging() {
        let s = parse_score(SCORE).unwrap();
        let frames = group_onsets(&s);
        let p = parse_performance("a\t1.0\t0.5\t60\nb\t1.1\t0.5\t70\nc\t1.25\t0.5\t64\nd\t1.5\t0.5\t64\n", &s).unwrap();
        let m = match_frames(&frames, &p);
        assert!(close(&average_onsets(&p, &m).unwrap(), &[1.05, 1.25, 1.5], 1e-12));

        let p = parse_performance("a\t0\t0.5\t60\nc\t0.5\t0.5\t64\nd\t1.0\t0.5\t64\n", &s).unwrap();
        assert_eq!(average_onsets(&p, &match_frames(&frames, &p)).unwrap(), vec![0.0, 0.5, 1.0]);

        let p = parse_performance("a\t1\t0.5\t60\nc\t0.9\t0.5\t64\nd\t2\t0.5\t64\n", &s).unwrap();
        let err = average_onsets(&p, &match_frames(&frames, &p)).unwrap_err();
        assert!(err.to_string().contains("frame 1"), "{err}");
    }

    #[test]
    fn dropped_frames() {
        let s = parse_score(SCORE).unwrap();
        let p = parse_performance("a\t0\t0.5\t60\nb\t0\t0.5\t60\nd\t1.0\t0.5\t64\n", &s).unwrap();
        let rows = targets(&s, &p).unwrap();
        assert_eq!(rows.iter().map(|r| r.frame_index).collect::<Vec<_>>(), vec![0, 2]);
        // one surviving gap of 2 beats in 1 s
        assert!(close(&rows.iter().map(|r| r.bpr).collect::<Vec<_>>(), &[1.0, 1.0], 1e-12));
    }

    #[test]
    fn bpr_hand_example() {
        // bp = [0.5, 1.0, 1.0], mean 2.5/3
        let bpr = compute_bpr(&[0.0, 0.5, 1.5], &[0.0, 1.0, 2.0]).unwrap();
        let mean = (0.5 + 1.0 + 1.0) / 3.0;
        assert!(close(&bpr, &[0.5 / mean, 1.0 / mean, 1.0 / mean], 1e-12));
        assert!(close(&bpr, &[0.6, 1.2, 1.2], 1e-12));
        assert!(close(&compute_bpr(&[0.0, 0.7, 1.4, 2.1], &[0.0, 1.0, 2.0, 3.0]).unwrap(), &[1.0; 4], 1e-12));
        assert!(compute_bpr(&[0.0], &[0.0]).is_err());
        assert!(compute_bpr(&[0.0, 1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn derivatives() {
        assert_eq!(derivative(&[2.0; 4], &[0.0, 1.0, 2.0, 3.0]).unwrap(), vec![0.0; 4]);
        assert_eq!(derivative(&[1.0, 1.5], &[0.0, 1.0]).unwrap(), vec![0.0, 0.5]);
        let d = derivative(&[0.0, 0.5, 1.0, 1.5], &[0.0, 0.5, 1.0, 1.5]).unwrap();
        assert!(close(&d[1..], &[1.0, 1.0, 1.0], 1e-12));
    }

    #[test]
    fn velocities() {
        let s = parse_score(SCORE).unwrap();
        let frames = group_onsets(&s);
        let p = parse_performance("a\t0\t0.5\t64\nb\t0\t0.5\t80\nc\t0.5\t0.5\t127\nd\t1.0\t0.5\t1\n", &s).unwrap();
        let v = compute_vel(&p, &match_frames(&frames, &p));
        assert_eq!(v, vec![80.0 / 127.0, 1.0, 1.0 / 127.0]);
    }

    #[test]
    fn assembled_targets() {
        let s = parse_score(SCORE).unwrap();
        let p = parse_performance("a\t0\t0.5\t64\nb\t0\t0.5\t64\nc\t0.5\t0.5\t64\nd\t1.0\t0.5\t64\n", &s).unwrap();
        for r in targets(&s, &p).unwrap() {
            assert!((r.bpr - 1.0).abs() < 1e-12);
            assert_eq!(r.d_bpr, 0.0);
            assert_eq!(r.vel, 64.0 / 127.0);
            assert_eq!(r.d_vel, 0.0);
        }

        // the hand BPR example with velocities 60, 90, 30
        let p = parse_performance("a\t0\t0.5\t50\nb\t0\t0.5\t60\nc\t0.5\t0.5\t90\nd\t1.5\t0.5\t30\n", &s).unwrap();
        let rows = targets(&s, &p).unwrap();
        let bpr: Vec<f64> = rows.iter().map(|r| r.bpr).collect();
        assert!(close(&bpr, &[0.6, 1.2, 1.2], 1e-12));
        let dbpr: Vec<f64> = rows.iter().map(|r| r.d_bpr).collect();
        assert!(close(&dbpr, &[0.0, 0.6, 0.0], 1e-12));
        let vel: Vec<f64> = rows.iter().map(|r| r.vel).collect();
        assert_eq!(vel, vec![60.0 / 127.0, 90.0 / 127.0, 30.0 / 127.0]);
        let dvel: Vec<f64> = rows.iter().map(|r| r.d_vel).collect();
        assert!(close(&dvel, &[0.0, 30.0 / 127.0, -60.0 / 127.0], 1e-12));

        let one = parse_score("#meter 0 4 4 duple\na\t0\t1\t60\t-\t-\t-\t0\n").unwrap();
        let p = parse_performance("a\t0\t0.5\t50\n", &one).unwrap();
        assert!(targets(&one, &p).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![TargetRow { frame_index: 3, beat: 1.5, bpr: 0.9, d_bpr: -0.1, vel: 0.5, d_vel: 0.25 }];
        assert_eq!(read_targets_csv(&targets_csv(&rows, &[])).unwrap(), rows);
        assert_eq!("d_vel".parse::<Target>().unwrap(), Target::DVel);
        assert!("tempo".parse::<Target>().is_err());
    }

    proptest! {
        #[test]
        fn bpr_mean_and_scale_invariance(
            gaps in prop::collection::vec((0.25f64..2.0, 0.1f64..1.5), 2..40),
            scale in 0.1f64..10.0,
        ) {
            let mut beats = vec![0.0];
            let mut onsets = vec![0.0];
            for (b, s) in &gaps {
                beats.push(beats.last().unwrap() + b);
                onsets.push(onsets.last().unwrap() + s);
            }
            let bpr = compute_bpr(&onsets, &beats).unwrap();
            let mean = bpr.iter().sum::<f64>() / bpr.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-9);
            let scaled: Vec<f64> = onsets.iter().map(|o| o * scale).collect();
            let bpr2 = compute_bpr(&scaled, &beats).unwrap();
            prop_assert!(close(&bpr, &bpr2, 1e-9));
        }
    }
}
