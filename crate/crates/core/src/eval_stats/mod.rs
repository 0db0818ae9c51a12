//! Cross-validation, scoring and significance tests.

mod sensitivity;

pub use sensitivity::{sensitivity, SensitivityMatrix, DEFAULT_RADIUS, SENSITIVITY_STEP};

use std::fmt;
use std::fmt::Write as _;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::brnn::{self, Example, ModelParams, TrainConfig};
use crate::csv_io::{comment_block, fmt_num};
use crate::dataset::Piece;
use crate::error::{domain, Error, Result};
use crate::performance_params::Target;
use crate::score_features::Groups;

pub const DEFAULT_FOLDS: usize = 5;
/// Features kept by the MI-selected feature set.
pub const FS_SIZE: usize = 10;
/// Two-tailed significance level used when reporting comparisons.
pub const SIGNIFICANCE: f64 = 0.01;
/// Features whose training-fold standard deviation is below this are left unscaled.
pub const MIN_STD: f64 = 1e-12;

/// Test folds over piece indices. Every piece is in exactly one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl FoldPlan {
    /// Indices of the training pieces for `fold`, ascending.
    pub fn training(&self, fold: usize) -> Vec<usize> {
        let mut out: Vec<usize> =
            self.folds.iter().enumerate().filter(|(i, _)| *i != fold).flat_map(|(_, f)| f.iter().copied()).collect();
        out.sort_unstable();
        out
    }
}

/// Seeded shuffle of `0..n` split into `k` contiguous folds; the first
/// `n % k` folds get one extra piece.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 {
        return Err(domain("fold count must be positive"));
    }
    if n < k {
        return Err(domain(format!("{n} pieces cannot fill {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = idx[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(FoldPlan { folds, seed })
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(domain(format!("{} predictions for {} values", predicted.len(), actual.len())));
    }
    if actual.len() < 2 {
        return Err(domain("R² needs at least two values"));
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Degenerate("constant actual values".into()));
    }
    let ss_res: f64 = predicted.iter().zip(actual).map(|(p, y)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

fn paired_differences(a: &[f64], b: &[f64]) -> Result<(f64, f64, usize)> {
    if a.len() != b.len() {
        return Err(domain(format!("paired samples of lengths {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(domain("paired test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 && mean == 0.0 {
        return Err(Error::Degenerate("identical samples".into()));
    }
    if sd == 0.0 {
        return Err(Error::Degenerate("paired differences have zero variance".into()));
    }
    Ok((mean, sd, n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub dof: usize,
}

/// Two-tailed paired-samples t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    let (mean, sd, n) = paired_differences(a, b)?;
    let t = mean / (sd / (n as f64).sqrt());
    let dof = n - 1;
    let dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| domain(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, p, dof })
}

/// Paired Cohen's d: mean of the differences over their sample standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    let (mean, sd, _) = paired_differences(a, b)?;
    Ok(mean / sd)
}

/// Per-feature affine scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Mean and population standard deviation over all rows of all
    /// sequences. Near-constant features get mean 0 and scale 1.
    pub fn fit(sequences: &[&[Vec<f64>]], width: usize) -> Self {
        let mut sum = vec![0.0; width];
        let mut n = 0usize;
        for row in sequences.iter().flat_map(|s| s.iter()) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
            n += 1;
        }
        let mean: Vec<f64> = sum.iter().map(|s| if n > 0 { s / n as f64 } else { 0.0 }).collect();
        let mut sq = vec![0.0; width];
        for row in sequences.iter().flat_map(|s| s.iter()) {
            for ((q, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                *q += (v - m) * (v - m);
            }
        }
        let (mut mean, mut scale) = (mean, vec![1.0; width]);
        for j in 0..width {
            let sd = if n > 0 { (sq[j] / n as f64).sqrt() } else { 0.0 };
            if sd < MIN_STD {
                mean[j] = 0.0;
            } else {
                scale[j] = sd;
            }
        }
        Self { mean, scale }
    }

    pub fn apply(&self, seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
        seq.iter()
            .map(|r| r.iter().zip(self.mean.iter().zip(&self.scale)).map(|(x, (m, s))| (x - m) / s).collect())
            .collect()
    }
}

/// Inputs for one cross-validation experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSet {
    Groups(Groups),
    /// Features chosen by mutual information, labelled `FS`.
    Selected(Vec<String>),
}

impl FeatureSet {
    pub fn names(&self) -> Vec<String> {
        match self {
            FeatureSet::Groups(g) => g.feature_names().into_iter().map(str::to_string).collect(),
            FeatureSet::Selected(v) => v.clone(),
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSet::Groups(g) => write!(f, "{g}"),
            FeatureSet::Selected(_) => f.write_str("FS"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub train: TrainConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: DEFAULT_FOLDS, train: TrainConfig::default() }
    }
}

impl CvConfig {
    pub fn to_kv(&self) -> Vec<String> {
        let mut out = vec![format!("cv.folds={}", self.folds), "cv.standardize=per-training-fold".to_string()];
        out.extend(self.train.to_kv());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub target: Target,
    pub feature_set: String,
    /// Piece id and R², in corpus order.
    pub per_piece_r2: Vec<(String, f64)>,
    /// Pieces whose actual target is constant.
    pub excluded: Vec<String>,
    pub mean_r2: f64,
    /// Test-set predictions per piece, in corpus order.
    pub predictions: Vec<Vec<f64>>,
}

impl EvalResult {
    pub fn r2_of(&self, id: &str) -> Option<f64> {
        self.per_piece_r2.iter().find(|(p, _)| p == id).map(|(_, r)| *r)
    }
}

/// Deterministic per-fold seed.
fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add((fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// k-fold cross-validation of one (target, feature set) pair. Inputs are
/// standardized with training-fold statistics; each fold trains its own
/// model. Folds run in parallel on the current rayon pool.
pub fn run_cv(
    pieces: &[Piece],
    target: Target,
    features: &FeatureSet,
    cfg: &CvConfig,
    seed: u64,
) -> Result<EvalResult> {
    let plan = make_folds(pieces.len(), cfg.folds, seed)?;
    let names = features.names();
    let inputs: Vec<Vec<Vec<f64>>> = pieces.iter().map(|p| p.inputs(&names)).collect::<Result<_>>()?;
    let targets: Vec<Vec<f64>> = pieces.iter().map(|p| p.target(target)).collect();
    let width = names.len();

    let fold_preds: Vec<Vec<(usize, Vec<f64>)>> = (0..plan.folds.len())
        .into_par_iter()
        .map(|f| -> Result<Vec<(usize, Vec<f64>)>> {
            let train_idx = plan.training(f);
            let seqs: Vec<&[Vec<f64>]> = train_idx.iter().map(|&i| inputs[i].as_slice()).collect();
            let std = Standardizer::fit(&seqs, width);
            let data: Vec<Example> = train_idx
                .iter()
                .map(|&i| Example { inputs: std.apply(&inputs[i]), targets: targets[i].clone() })
                .collect();
            let tc = TrainConfig { seed: fold_seed(seed, f), ..cfg.train.clone() };
            let (params, _) =
                brnn::train(&data, width, &tc).map_err(|e| domain(format!("{target}/{features} fold {f}: {e}")))?;
            plan.folds[f].iter().map(|&i| Ok((i, brnn::predict(&params, &std.apply(&inputs[i]))?))).collect()
        })
        .collect::<Result<_>>()?;

    let mut predictions = vec![Vec::new(); pieces.len()];
    for (i, y) in fold_preds.into_iter().flatten() {
        predictions[i] = y;
    }
    let mut per_piece_r2 = Vec::new();
    let mut excluded = Vec::new();
    for (i, p) in pieces.iter().enumerate() {
        match r2(&predictions[i], &targets[i]) {
            Ok(v) => per_piece_r2.push((p.id.clone(), v)),
            Err(e) => {
                warn!("{target}/{features}: piece {} excluded from R²: {e}", p.id);
                excluded.push(p.id.clone());
            }
        }
    }
    if per_piece_r2.is_empty() {
        return Err(Error::Degenerate(format!("{target}/{features}: no piece has a scorable target")));
    }
    let mean_r2 = per_piece_r2.iter().map(|(_, r)| r).sum::<f64>() / per_piece_r2.len() as f64;
    Ok(EvalResult { target, feature_set: features.to_string(), per_piece_r2, excluded, mean_r2, predictions })
}

/// One row of the results table: a feature set with and without tension.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub target: Target,
    pub feature_set: String,
    pub mean_r2: f64,
    pub mean_r2_plus_t: Option<f64>,
    pub test: Option<TTest>,
    pub cohens_d: Option<f64>,
}

impl Comparison {
    /// Pairs per-piece R² of `with_t` against `base` on the pieces scored in
    /// both. A degenerate test leaves p and d empty.
    pub fn paired(base: &EvalResult, with_t: &EvalResult) -> Comparison {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (id, r) in &with_t.per_piece_r2 {
            if let Some(r0) = base.r2_of(id) {
                a.push(*r);
                b.push(r0);
            }
        }
        let test = paired_t_test(&a, &b);
        if let Err(e) = &test {
            warn!("{}/{} vs +T: {e}", base.target, base.feature_set);
        }
        Comparison {
            target: base.target,
            feature_set: base.feature_set.clone(),
            mean_r2: base.mean_r2,
            mean_r2_plus_t: Some(with_t.mean_r2),
            test: test.ok(),
            cohens_d: cohens_d(&a, &b).ok(),
        }
    }

    pub fn single(res: &EvalResult) -> Comparison {
        Comparison {
            target: res.target,
            feature_set: res.feature_set.clone(),
            mean_r2: res.mean_r2,
            mean_r2_plus_t: None,
            test: None,
            cohens_d: None,
        }
    }

    pub fn significant(&self) -> bool {
        self.test.is_some_and(|t| t.p < SIGNIFICANCE)
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

pub fn results_csv(rows: &[Comparison], meta: &[String]) -> String {
    let mut out = comment_block(meta);
    out.push_str("target,feature_set,mean_r2,mean_r2_plus_T,p_value,cohens_d\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.target,
            r.feature_set,
            fmt_num(r.mean_r2),
            opt_num(r.mean_r2_plus_t),
            opt_num(r.test.map(|t| t.p)),
            opt_num(r.cohens_d)
        );
    }
    out
}

pub fn per_piece_csv(results: &[EvalResult], meta: &[String]) -> String {
    let mut out = comment_block(meta);
    out.push_str("target,feature_set,piece,r2\n");
    for res in results {
        for (id, r) in &res.per_piece_r2 {
            let _ = writeln!(out, "{},{},{},{}", res.target, res.feature_set, id, fmt_num(*r));
        }
    }
    out
}

/// Model trained on every piece (no held-out fold), with its standardizer.
pub fn fit_full(
    pieces: &[Piece],
    target: Target,
    names: &[String],
    cfg: &TrainConfig,
) -> Result<(ModelParams, Standardizer)> {
    let inputs: Vec<Vec<Vec<f64>>> = pieces.iter().map(|p| p.inputs(names)).collect::<Result<_>>()?;
    let seqs: Vec<&[Vec<f64>]> = inputs.iter().map(Vec::as_slice).collect();
    let std = Standardizer::fit(&seqs, names.len());
    let data: Vec<Example> =
        inputs.iter().zip(pieces).map(|(x, p)| Example { inputs: std.apply(x), targets: p.target(target) }).collect();
    let (params, _) = brnn::train(&data, names.len(), cfg)?;
    Ok((params, std))
}
