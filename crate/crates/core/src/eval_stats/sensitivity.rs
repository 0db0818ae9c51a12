use std::fmt::Write as _;

use rayon::prelude::*;

use crate::brnn::{cell_step, direction_states, readout, Direction, ModelParams};
use crate::csv_io::{comment_block, fmt_num};
use crate::error::{domain, Result};

pub const DEFAULT_RADIUS: usize = 5;
/// Central-difference step on standardized inputs.
pub const SENSITIVITY_STEP: f64 = 1e-4;

/// Average local derivative of the prediction at step `tau` with respect to
/// feature `f` at step `tau + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    pub features: Vec<String>,
    pub radius: usize,
    /// `values[feature][offset + radius]`.
    pub values: Vec<Vec<f64>>,
    /// Number of (piece, tau) positions averaged.
    pub positions: usize,
    /// Positions too close to a sequence boundary to cover the full window.
    pub skipped: usize,
}

impl SensitivityMatrix {
    pub fn offsets(&self) -> impl Iterator<Item = i64> {
        let r = self.radius as i64;
        -r..=r
    }

    pub fn get(&self, feature: &str, offset: i64) -> Option<f64> {
        let i = self.features.iter().position(|f| f == feature)?;
        let j = usize::try_from(offset + self.radius as i64).ok()?;
        self.values[i].get(j).copied()
    }

    pub fn to_csv(&self, meta: &[String]) -> String {
        let mut lines = meta.to_vec();
        lines.push(format!("sensitivity.radius={}", self.radius));
        lines.push(format!("sensitivity.step={SENSITIVITY_STEP}"));
        lines.push(format!("sensitivity.positions={}", self.positions));
        lines.push(format!("sensitivity.skipped={}", self.skipped));
        let mut out = comment_block(&lines);
        out.push_str("feature,offset,value\n");
        for (f, row) in self.features.iter().zip(&self.values) {
            for (o, v) in self.offsets().zip(row) {
                let _ = writeln!(out, "{f},{o},{}", fmt_num(*v));
            }
        }
        out
    }
}

/// Predictions in `lo..=hi` after replacing the input at step `t` by `x`.
/// Only the steps a perturbation at `t` can reach within that range are
/// recomputed; the rest reuse the unperturbed states.
struct Perturbed<'a> {
    p: &'a ModelParams,
    seq: &'a [Vec<f64>],
    hf: Vec<Vec<f64>>,
    cf: Vec<Vec<f64>>,
    hb: Vec<Vec<f64>>,
    cb: Vec<Vec<f64>>,
}

impl<'a> Perturbed<'a> {
    fn new(p: &'a ModelParams, seq: &'a [Vec<f64>]) -> Self {
        let (hf, cf) = direction_states(p, Direction::Forward, seq);
        let (hb, cb) = direction_states(p, Direction::Backward, seq);
        Self { p, seq, hf, cf, hb, cb }
    }

    fn outputs(&self, t: usize, x: &[f64], lo: usize, hi: usize) -> Vec<f64> {
        let h = self.p.hidden();
        let n = self.seq.len();
        let zeros = vec![0.0; h];
        let input = |s: usize| if s == t { x } else { self.seq[s].as_slice() };
        // forward direction: steps t..=hi change
        let mut hf_new = Vec::new();
        let (mut hp, mut cp) =
            if t > 0 { (self.hf[t - 1].clone(), self.cf[t - 1].clone()) } else { (zeros.clone(), zeros.clone()) };
        for s in t..=hi.max(t) {
            let (mut ho, mut co) = (vec![0.0; h], vec![0.0; h]);
            cell_step(self.p, Direction::Forward, input(s), &hp, &cp, &mut ho, &mut co);
            hf_new.push(ho.clone());
            hp = ho;
            cp = co;
        }
        // backward direction: steps lo..=t change
        let mut hb_new = vec![Vec::new(); t + 1];
        let (mut hp, mut cp) =
            if t + 1 < n { (self.hb[t + 1].clone(), self.cb[t + 1].clone()) } else { (zeros.clone(), zeros) };
        for s in (lo.min(t)..=t).rev() {
            let (mut ho, mut co) = (vec![0.0; h], vec![0.0; h]);
            cell_step(self.p, Direction::Backward, input(s), &hp, &cp, &mut ho, &mut co);
            hb_new[s] = ho.clone();
            hp = ho;
            cp = co;
        }
        (lo..=hi)
            .map(|tau| {
                let f = if tau >= t { &hf_new[tau - t] } else { &self.hf[tau] };
                let b = if tau <= t { &hb_new[tau] } else { &self.hb[tau] };
                readout(self.p, f, b)
            })
            .collect()
    }
}

/// Per piece: sums over interior positions, their count, and the skipped count.
fn piece_sums(p: &ModelParams, seq: &[Vec<f64>], radius: usize) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let n = seq.len();
    let width = p.input_dim();
    if let Some(t) = seq.iter().position(|r| r.len() != width) {
        return Err(domain(format!("frame {t}: expected {width} inputs, got {}", seq[t].len())));
    }
    let mut sums = vec![vec![0.0; 2 * radius + 1]; width];
    if n < 2 * radius + 1 {
        return Ok((sums, 0, n));
    }
    let (lo, hi) = (radius, n - 1 - radius);
    let model = Perturbed::new(p, seq);
    for t in 0..n {
        // only predictions at interior taus within the window of t matter
        let tau_lo = t.saturating_sub(radius).max(lo);
        let tau_hi = (t + radius).min(hi);
        if tau_lo > tau_hi {
            continue;
        }
        let mut x = seq[t].clone();
        for f in 0..width {
            let x0 = x[f];
            x[f] = x0 + SENSITIVITY_STEP;
            let up = model.outputs(t, &x, tau_lo, tau_hi);
            x[f] = x0 - SENSITIVITY_STEP;
            let down = model.outputs(t, &x, tau_lo, tau_hi);
            x[f] = x0;
            for (k, tau) in (tau_lo..=tau_hi).enumerate() {
                let d = (up[k] - down[k]) / (2.0 * SENSITIVITY_STEP);
                sums[f][t + radius - tau] += d;
            }
        }
    }
    Ok((sums, hi - lo + 1, n - (hi - lo + 1)))
}

/// Finite-difference sensitivity of a trained model, averaged over every
/// interior position of every (standardized) input sequence.
pub fn sensitivity(
    p: &ModelParams,
    sequences: &[Vec<Vec<f64>>],
    features: &[String],
    radius: usize,
) -> Result<SensitivityMatrix> {
    if features.len() != p.input_dim() {
        return Err(domain(format!("{} feature names for a model with {} inputs", features.len(), p.input_dim())));
    }
    let parts: Vec<(Vec<Vec<f64>>, usize, usize)> =
        sequences.par_iter().map(|s| piece_sums(p, s, radius)).collect::<Result<_>>()?;
    let mut values = vec![vec![0.0; 2 * radius + 1]; features.len()];
    let (mut positions, mut skipped) = (0, 0);
    for (sums, pos, skip) in parts {
        for (row, s) in values.iter_mut().zip(&sums) {
            for (v, x) in row.iter_mut().zip(s) {
                *v += x;
            }
        }
        positions += pos;
        skipped += skip;
    }
    if positions == 0 {
        return Err(domain(format!("no sequence is longer than {} steps", 2 * radius)));
    }
    for row in &mut values {
        row.iter_mut().for_each(|v| *v /= positions as f64);
    }
    Ok(SensitivityMatrix { features: features.to_vec(), radius, values, positions, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brnn::{forward, init_model};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn windowed_outputs_equal_full_forward() {
        let p = init_model(3, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let seq: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let model = Perturbed::new(&p, &seq);
        for t in [0, 5, 11] {
            let x = vec![0.9, -0.4, 0.2];
            let mut changed = seq.clone();
            changed[t] = x.clone();
            let full = forward(&p, &changed).unwrap();
            let (lo, hi) = (t.saturating_sub(3), (t + 3).min(11));
            assert_eq!(model.outputs(t, &x, lo, hi), full[lo..=hi].to_vec());
        }
    }
}
