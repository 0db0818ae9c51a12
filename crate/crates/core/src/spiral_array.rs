//! Spiral array geometry: pitch positions on a helix indexed by the line of
//! fifths, centers of effect of weighted pitch sets, chords and keys.

use std::fmt::{self, Write as _};
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Major,
    Minor,
}

impl FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "major" => Ok(Mode::Major),
            "minor" => Ok(Mode::Minor),
            other => Err(domain(format!("invalid mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Major => "major",
            Mode::Minor => "minor",
        })
    }
}

/// A key as tonic line-of-fifths index plus mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Key {
    pub tonic: i32,
    pub mode: Mode,
}

/// Helix radius, rise per fifth, and triad/key weightings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpiralParams {
    pub r: f64,
    pub h: f64,
    /// Weights of root, fifth and third in a triad.
    pub chord_weights: [f64; 3],
    /// Weights of tonic, dominant and subdominant triads in a key.
    pub key_weights: [f64; 3],
}

impl Default for SpiralParams {
    fn default() -> Self {
        // The published key weights (0.516, 0.315, 0.168) sum to 0.999; they
        // are stored normalized, which leaves every key center unchanged.
        let kw = [0.516, 0.315, 0.168];
        let s: f64 = kw.iter().sum();
        Self {
            r: 1.0,
            h: (2.0f64 / 15.0).sqrt(),
            chord_weights: [0.536, 0.274, 0.190],
            key_weights: [kw[0] / s, kw[1] / s, kw[2] / s],
        }
    }
}

impl SpiralParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(domain(format!("spiral radius must be > 0, got {}", self.r)));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(domain(format!("spiral rise must be > 0, got {}", self.h)));
        }
        for (name, w) in [("chord_weights", self.chord_weights), ("key_weights", self.key_weights)] {
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || !(w[0] >= w[1] && w[1] >= w[2] && w[2] > 0.0) {
                return Err(domain(format!("{name} must be non-increasing, positive and sum to 1, got {w:?}")));
            }
        }
        Ok(())
    }

    /// Flat `key=value` lines, as embedded in CSV headers.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "spiral.r={}", self.r);
        let _ = writeln!(s, "spiral.h={}", self.h);
        let cw = self.chord_weights;
        let kw = self.key_weights;
        let _ = writeln!(s, "spiral.chord_weights={},{},{}", cw[0], cw[1], cw[2]);
        let _ = writeln!(s, "spiral.key_weights={},{},{}", kw[0], kw[1], kw[2]);
        s
    }

    /// Reads `key=value` lines; unspecified keys keep their defaults. A
    /// leading `#` and the `spiral.` prefix are optional.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut p = Self::default();
        for line in text.lines() {
            let line = line.trim().trim_start_matches('#').trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| domain(format!("expected key=value, got {line:?}")))?;
            let k = k.trim().trim_start_matches("spiral.");
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| domain(format!("invalid number {s:?} for {k}")));
            let triple = |s: &str| -> Result<[f64; 3]> {
                let v: Vec<f64> = s.split(',').map(num).collect::<Result<_>>()?;
                v.try_into().map_err(|_| domain(format!("{k} needs three comma-separated values")))
            };
            match k {
                "r" => p.r = num(v)?,
                "h" => p.h = num(v)?,
                "chord_weights" => p.chord_weights = triple(v)?,
                "key_weights" => p.key_weights = triple(v)?,
                other => return Err(domain(format!("unknown spiral parameter {other:?}"))),
            }
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpiralPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SpiralPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

impl Add for SpiralPoint {
    type Output = SpiralPoint;
    fn add(self, o: SpiralPoint) -> SpiralPoint {
        SpiralPoint::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for SpiralPoint {
    type Output = SpiralPoint;
    fn sub(self, o: SpiralPoint) -> SpiralPoint {
        SpiralPoint::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<SpiralPoint> for f64 {
    type Output = SpiralPoint;
    fn mul(self, p: SpiralPoint) -> SpiralPoint {
        SpiralPoint::new(self * p.x, self * p.y, self * p.z)
    }
}

/// Position of a pitch on the helix: a quarter turn and a rise of `h` per fifth.
pub fn pitch_position(tpc: i32, params: &SpiralParams) -> SpiralPoint {
    // exact quarter turns, so tpc and tpc+4k share x and y bit for bit
    let (s, c) = match tpc.rem_euclid(4) {
        0 => (0.0, 1.0),
        1 => (1.0, 0.0),
        2 => (0.0, -1.0),
        _ => (-1.0, 0.0),
    };
    SpiralPoint::new(params.r * s, params.r * c, tpc as f64 * params.h)
}

/// Weighted mean of the members' helix positions.
pub fn center_of_effect(members: &[(i32, f64)], params: &SpiralParams) -> Result<SpiralPoint> {
    weighted_mean(members.iter().map(|&(tpc, w)| (pitch_position(tpc, params), w)))
}

fn weighted_mean(points: impl IntoIterator<Item = (SpiralPoint, f64)>) -> Result<SpiralPoint> {
    let mut acc = SpiralPoint::default();
    let mut total = 0.0;
    let mut n = 0;
    for (p, w) in points {
        if !(w.is_finite() && w > 0.0) {
            return Err(domain(format!("center of effect weights must be > 0, got {w}")));
        }
        acc = acc + w * p;
        total += w;
        n += 1;
    }
    if n == 0 {
        return Err(domain("center of effect of an empty set"));
    }
    Ok((1.0 / total) * acc)
}

/// Center of a major or minor triad built on `root`.
pub fn triad_coe(root: i32, mode: Mode, params: &SpiralParams) -> SpiralPoint {
    let third = match mode {
        Mode::Major => root + 4,
        Mode::Minor => root - 3,
    };
    let [w1, w2, w3] = params.chord_weights;
    center_of_effect(&[(root, w1), (root + 1, w2), (third, w3)], params).expect("chord weights are positive")
}

/// Center of effect of a key: tonic, dominant and subdominant triads weighted
/// by `key_weights`. Minor keys use a major dominant and minor subdominant.
pub fn key_coe(tonic: i32, mode: Mode, params: &SpiralParams) -> SpiralPoint {
    let (dominant, subdominant) = match mode {
        Mode::Major => (Mode::Major, Mode::Major),
        Mode::Minor => (Mode::Major, Mode::Minor),
    };
    let [k1, k2, k3] = params.key_weights;
    weighted_mean([
        (triad_coe(tonic, mode, params), k1),
        (triad_coe(tonic + 1, dominant, params), k2),
        (triad_coe(tonic - 1, subdominant, params), k3),
    ])
    .expect("key weights are positive")
}

pub fn distance(a: SpiralPoint, b: SpiralPoint) -> f64 {
    (a - b).norm()
}

/// Distance between enharmonic spellings such as C# and Db (twelve fifths).
pub fn enharmonic_unit(params: &SpiralParams) -> f64 {
    distance(pitch_position(7, params), pitch_position(-5, params))
}

/// A duration-weighted set of distinct pitches with its cached center of effect.
#[derive(Debug, Clone, PartialEq)]
pub struct Cloud {
    members: Vec<(i32, f64)>,
    coe: SpiralPoint,
}

impl Cloud {
    /// Builds a cloud, merging members with equal tpc by summing weights.
    pub fn new(members: impl IntoIterator<Item = (i32, f64)>, params: &SpiralParams) -> Result<Self> {
        let mut merged: Vec<(i32, f64)> = Vec::new();
        for (tpc, w) in members {
            if !(w.is_finite() && w > 0.0) {
                return Err(domain(format!("cloud weight must be > 0, got {w} for tpc {tpc}")));
            }
            match merged.iter_mut().find(|(t, _)| *t == tpc) {
                Some(m) => m.1 += w,
                None => merged.push((tpc, w)),
            }
        }
        merged.sort_by_key(|&(t, _)| t);
        let coe = center_of_effect(&merged, params)?;
        Ok(Self { members: merged, coe })
    }

    pub fn members(&self) -> &[(i32, f64)] {
        &self.members
    }

    pub fn coe(&self) -> SpiralPoint {
        self.coe
    }
}
