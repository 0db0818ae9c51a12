//! Seeded synthetic scores and performances with a known tension-to-timing
//! rule, for end-to-end checks where no real corpus is available.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Piece;
use crate::error::{domain, Error, Result};
use crate::performance_params::Target;
use crate::spiral_array::{Key, Mode, SpiralParams};
use crate::symbolic_io::{MeterClass, MeterSegment, Performance, PerformedNote, Score, ScoreNote, SpelledPitch};
use crate::tension::{tension_track, WindowConfig};

/// Slope of the beat period on cloud diameter under [`Rule::TcdSlow`].
pub const TCD_SLOW_GAIN: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// Timing is a slow random drift unrelated to the score.
    None,
    /// Local beat period grows linearly with the frame's cloud diameter.
    TcdSlow,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::None => "none",
            Rule::TcdSlow => "t_cd-slow",
        })
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Rule::None),
            "t_cd-slow" => Ok(Rule::TcdSlow),
            other => Err(domain(format!("unknown synthesis rule {other:?} (expected none or t_cd-slow)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub pieces: usize,
    /// Onset frames per piece.
    pub length: usize,
    pub seed: u64,
    pub rule: Rule,
    pub noise_sd: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pieces == 0 {
            return Err(domain("number of pieces must be positive"));
        }
        if self.length < 2 {
            return Err(domain("pieces need at least two onsets"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(domain("noise standard deviation must be finite and non-negative"));
        }
        Ok(())
    }

    /// Generation settings and the timing formula, as `key=value` lines.
    pub fn ground_truth(&self) -> Vec<String> {
        let formula = match self.rule {
            Rule::None => "ioi_sec = gap_beats * period * drift * (1 + N(0, noise_sd))".to_string(),
            Rule::TcdSlow => {
                format!("ioi_sec = gap_beats * period * (1 + {TCD_SLOW_GAIN} * t_cd + N(0, noise_sd))")
            }
        };
        vec![
            format!("synth.pieces={}", self.pieces),
            format!("synth.length={}", self.length),
            format!("synth.seed={}", self.seed),
            format!("synth.rule={}", self.rule),
            format!("synth.noise_sd={}", self.noise_sd),
            format!("synth.formula={formula}"),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPiece {
    pub id: String,
    pub score: Score,
    pub performance: Performance,
}

fn piece_rng(seed: u64, piece: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(piece as u64 + 1);
    rng
}

fn midi_for(tpc: i32, rng: &mut ChaCha8Rng) -> i32 {
    let pc = (7 * tpc).rem_euclid(12);
    12 * rng.random_range(4..7) + pc
}

/// Line-of-fifths positions of one frame's notes.
fn frame_tpcs(key: Key, rng: &mut ChaCha8Rng) -> Vec<i32> {
    let t = key.tonic;
    // diatonic collection around the tonic on the line of fifths
    let scale: Vec<i32> = match key.mode {
        Mode::Major => (t - 1..=t + 5).collect(),
        Mode::Minor => (t - 4..=t + 2).collect(),
    };
    let pick = |rng: &mut ChaCha8Rng| scale[rng.random_range(0..scale.len())];
    match rng.random_range(0..10) {
        0..=1 => vec![pick(rng)],
        2..=3 => {
            let a = pick(rng);
            vec![a, a + rng.random_range(-6..=6)]
        }
        4..=6 => {
            let root = pick(rng);
            let third = if rng.random_bool(0.5) { root + 4 } else { root - 3 };
            vec![root, root + 1, third]
        }
        _ => {
            let n = rng.random_range(2..=4);
            (0..n).map(|_| t + rng.random_range(-8..=10)).collect()
        }
    }
}

/// A random score of `length` onset frames with explicit spellings.
pub fn random_score(length: usize, rng: &mut ChaCha8Rng) -> Result<Score> {
    let key =
        Key { tonic: rng.random_range(-3..=3), mode: if rng.random_bool(0.5) { Mode::Major } else { Mode::Minor } };
    let meter = match rng.random_range(0..3) {
        0 => MeterSegment { start_beat: 0.0, beats_per_bar: 4.0, beat_unit: 4, class: MeterClass::Duple },
        1 => MeterSegment { start_beat: 0.0, beats_per_bar: 3.0, beat_unit: 4, class: MeterClass::Triple },
        _ => MeterSegment { start_beat: 0.0, beats_per_bar: 6.0, beat_unit: 8, class: MeterClass::Duple },
    };
    const GAPS: [f64; 5] = [0.5, 1.0, 1.0, 1.0, 2.0];
    let mut notes = Vec::new();
    let mut beat = 0.0;
    for frame in 0..length {
        let gap = GAPS[rng.random_range(0..GAPS.len())];
        let mut pitches: Vec<(i32, i32)> = Vec::new();
        for tpc in frame_tpcs(key, rng) {
            let midi = midi_for(tpc, rng);
            if !pitches.iter().any(|p| p.1 == midi) {
                pitches.push((tpc, midi));
            }
        }
        let top = pitches.iter().map(|p| p.1).max().unwrap_or(0);
        for (j, (tpc, midi)) in pitches.into_iter().enumerate() {
            notes.push(ScoreNote {
                id: format!("n{frame}_{j}"),
                onset: beat,
                duration: gap,
                midi_pitch: midi as u8,
                spelled: Some(SpelledPitch::from_tpc(tpc, midi)?),
                is_melody: midi == top,
            });
        }
        beat += gap;
    }
    Score::new(notes, vec![meter], Some(key))
}

/// Performs `score` under `rule`. Every note is played; all notes of a
/// frame share its onset.
fn perform(score: &Score, cfg: &SynthConfig, t_cd: &[f64], rng: &mut ChaCha8Rng) -> Result<Performance> {
    let frames = crate::symbolic_io::group_onsets(score);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| domain(e.to_string()))?;
    let period: f64 = rng.random_range(0.4..0.8);
    let mut drift = 1.0f64;
    let mut velocity: f64 = rng.random_range(50.0..80.0);
    let mut t = 0.0;
    let mut notes = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        let gap = match frames.get(i + 1) {
            Some(next) => next.beat - frame.beat,
            None => score.notes[frame.note_indices[0]].duration,
        };
        let factor = match cfg.rule {
            Rule::None => {
                drift = (drift + rng.random_range(-0.03..0.03)).clamp(0.7, 1.3);
                drift * (1.0 + noise.sample(rng))
            }
            Rule::TcdSlow => 1.0 + TCD_SLOW_GAIN * t_cd[i] + noise.sample(rng),
        };
        let ioi = gap * period * factor.max(0.2);
        velocity = (velocity + rng.random_range(-6.0..6.0)).clamp(30.0, 110.0);
        for &k in &frame.note_indices {
            let n = &score.notes[k];
            notes.push(PerformedNote {
                score_id: n.id.clone(),
                onset_sec: t,
                duration_sec: ioi,
                velocity: (velocity + rng.random_range(-3.0..3.0)).round().clamp(1.0, 127.0) as u8,
            });
        }
        t += ioi;
    }
    Performance::new(notes, score)
}

/// Generates the corpus. Piece `i` depends only on (seed, i).
pub fn synth_corpus(cfg: &SynthConfig, window: &WindowConfig, params: &SpiralParams) -> Result<Vec<SynthPiece>> {
    cfg.validate()?;
    let width = cfg.pieces.to_string().len();
    (0..cfg.pieces)
        .map(|i| {
            let mut rng = piece_rng(cfg.seed, i);
            let score = random_score(cfg.length, &mut rng)?;
            let t_cd: Vec<f64> = tension_track(&score, window, params)?.iter().map(|f| f.t_cd).collect();
            let performance = perform(&score, cfg, &t_cd, &mut rng)?;
            Ok(SynthPiece { id: format!("piece{i:0width$}"), score, performance })
        })
        .collect()
}

/// Replaces `target` in every piece with `slope * feature + intercept`
/// plus seeded Gaussian noise.
pub fn linear_target(
    pieces: &mut [Piece],
    target: Target,
    feature: &str,
    slope: f64,
    intercept: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<()> {
    let noise = Normal::new(0.0, noise_sd).map_err(|e| domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in pieces {
        let x = p.features.column(feature).ok_or_else(|| domain(format!("piece {} has no feature {feature}", p.id)))?;
        for (row, v) in p.targets.iter_mut().zip(x) {
            let y = slope * v + intercept + noise.sample(&mut rng);
            match target {
                Target::Bpr => row.bpr = y,
                Target::DBpr => row.d_bpr = y,
                Target::Vel => row.vel = y,
                Target::DVel => row.d_vel = y,
            }
        }
    }
    Ok(())
}
