//! Mutual information between features and expressive targets, estimated
//! with k-nearest-neighbor statistics, and MI-based feature ranking.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::digamma;

use crate::csv_io::{comment_block, fmt_num};
use crate::dataset::Piece;
use crate::error::{domain, Result};
use crate::performance_params::Target;

pub const DEFAULT_K: usize = 3;
const JITTER: f64 = 1e-10;

fn distinct_values(v: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = v.to_vec();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Estimates I(x; y) in nats.
///
/// Continuous pairs use the Kraskov-Stögbauer-Grassberger estimator (max-norm,
/// first algorithm). When one variable takes at most two values, the
/// discrete-continuous nearest-neighbor variant is used; two binary variables
/// use the plug-in estimate. Ties are broken by jitter of relative amplitude
/// 1e-10 drawn from `seed`, shared by both variables so that the estimate is
/// symmetric. The result is clipped at zero.
pub fn estimate_mi(x: &[f64], y: &[f64], k: usize, seed: u64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(domain(format!("sample lengths differ: {} vs {}", x.len(), y.len())));
    }
    if k == 0 {
        return Err(domain("k must be at least 1"));
    }
    let n = x.len();
    if n < 2 * k + 2 {
        return Err(domain(format!("need at least {} samples for k = {k}, got {n}", 2 * k + 2)));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(domain("samples must be finite"));
    }
    let (dx, dy) = (distinct_values(x), distinct_values(y));
    if dx.len() < 2 || dy.len() < 2 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let jitter = |v: &[f64]| -> Vec<f64> {
        let amp = JITTER * std_dev(v);
        v.iter().zip(&noise).map(|(a, u)| a + amp * u).collect()
    };
    let mi = match (dx.len() == 2, dy.len() == 2) {
        (false, false) => ksg(&jitter(x), &jitter(y), k),
        (true, false) => discrete_continuous(x, &jitter(y), k),
        (false, true) => discrete_continuous(y, &jitter(x), k),
        (true, true) => plug_in(x, y),
    };
    Ok(mi.max(0.0))
}

/// Number of values in the sorted slice strictly within `radius` of `c`.
fn count_within(sorted: &[f64], c: f64, radius: f64) -> usize {
    // compare distances, not shifted bounds, so rounding matches |c - v| < radius
    let lo = sorted.partition_point(|&v| v < c && c - v >= radius);
    let hi = sorted.partition_point(|&v| v <= c || v - c < radius);
    hi.saturating_sub(lo)
}

/// Keeps the k smallest distances seen; `worst()` is the current k-th.
struct KSmallest {
    d: Vec<f64>,
    k: usize,
}

impl KSmallest {
    fn new(k: usize) -> Self {
        Self { d: Vec::with_capacity(k + 1), k }
    }

    fn worst(&self) -> f64 {
        if self.d.len() < self.k {
            f64::INFINITY
        } else {
            self.d[self.k - 1]
        }
    }

    fn push(&mut self, v: f64) {
        if v >= self.worst() {
            return;
        }
        let pos = self.d.partition_point(|&e| e <= v);
        self.d.insert(pos, v);
        self.d.truncate(self.k);
    }
}

fn ksg(x: &[f64], y: &[f64], k: usize) -> f64 {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let mut ys_sorted = y.to_vec();
    ys_sorted.sort_by(f64::total_cmp);

    let mut acc = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        let mut best = KSmallest::new(k);
        // scan outward in x; stop once the x gap alone exceeds the k-th distance
        for &j in order[..pos].iter().rev() {
            let gx = x[i] - x[j];
            if gx >= best.worst() {
                break;
            }
            best.push(gx.max((y[i] - y[j]).abs()));
        }
        for &j in &order[pos + 1..] {
            let gx = x[j] - x[i];
            if gx >= best.worst() {
                break;
            }
            best.push(gx.max((y[i] - y[j]).abs()));
        }
        let eps = best.worst();
        let nx = count_within(&xs, x[i], eps) - 1;
        let ny = count_within(&ys_sorted, y[i], eps) - 1;
        acc += digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0);
    }
    digamma(k as f64) + digamma(n as f64) - acc / n as f64
}

fn discrete_continuous(labels: &[f64], y: &[f64], k: usize) -> f64 {
    let mut groups: HashMap<u64, Vec<f64>> = HashMap::new();
    for (l, v) in labels.iter().zip(y) {
        groups.entry(l.to_bits()).or_default().push(*v);
    }
    for g in groups.values_mut() {
        g.sort_by(f64::total_cmp);
    }
    let mut all = y.to_vec();
    all.sort_by(f64::total_cmp);

    let (mut kept, mut sum_k, mut sum_label, mut sum_m) = (0usize, 0.0, 0.0, 0.0);
    for (l, &v) in labels.iter().zip(y) {
        let g = &groups[&l.to_bits()];
        if g.len() < 2 {
            continue;
        }
        let kk = k.min(g.len() - 1);
        // k-th nearest same-label neighbor via a sorted window around v
        let pos = g.partition_point(|&e| e < v);
        let (mut lo, mut hi) = (pos, pos + 1); // g[pos] is v itself
        let mut radius = 0.0;
        for _ in 0..kk {
            let left = if lo > 0 { v - g[lo - 1] } else { f64::INFINITY };
            let right = if hi < g.len() { g[hi] - v } else { f64::INFINITY };
            if left <= right {
                radius = left;
                lo -= 1;
            } else {
                radius = right;
                hi += 1;
            }
        }
        let m = count_within(&all, v, radius).max(1);
        kept += 1;
        sum_k += digamma(kk as f64);
        sum_label += digamma(g.len() as f64);
        sum_m += digamma(m as f64);
    }
    if kept == 0 {
        return 0.0;
    }
    let n = kept as f64;
    digamma(n) + (sum_k - sum_label - sum_m) / n
}

fn plug_in(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mut joint: HashMap<(u64, u64), f64> = HashMap::new();
    let mut px: HashMap<u64, f64> = HashMap::new();
    let mut py: HashMap<u64, f64> = HashMap::new();
    for (a, b) in x.iter().zip(y) {
        *joint.entry((a.to_bits(), b.to_bits())).or_default() += 1.0;
        *px.entry(a.to_bits()).or_default() += 1.0;
        *py.entry(b.to_bits()).or_default() += 1.0;
    }
    joint.iter().map(|(&(a, b), &c)| c / n * (c * n / (px[&a] * py[&b])).ln()).sum()
}

/// Seeded random subset of `n` pieces: `max(1, round(fraction * n))` indices
/// in ascending order.
pub fn sample_pieces(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(domain("no pieces to sample"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(domain(format!("subset fraction must be in (0, 1], got {fraction}")));
    }
    let take = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = idx[..take].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// MI between every feature (rows) and every target (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct MiTable {
    pub features: Vec<String>,
    pub targets: Vec<Target>,
    /// `values[feature][target]`, nats.
    pub values: Vec<Vec<f64>>,
}

impl MiTable {
    /// Each column divided by its maximum; all-zero columns stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        let maxes: Vec<f64> =
            (0..self.targets.len()).map(|j| self.values.iter().map(|r| r[j]).fold(0.0, f64::max)).collect();
        self.values
            .iter()
            .map(|r| r.iter().zip(&maxes).map(|(v, m)| if *m > 0.0 { v / m } else { 0.0 }).collect())
            .collect()
    }

    pub fn value(&self, feature: &str, target: Target) -> Option<f64> {
        let i = self.features.iter().position(|f| f == feature)?;
        let j = self.targets.iter().position(|t| *t == target)?;
        Some(self.values[i][j])
    }

    pub fn to_csv(&self, normalized: bool, meta: &[String]) -> String {
        let data = if normalized { self.normalized() } else { self.values.clone() };
        let mut out = comment_block(meta);
        out.push_str("feature");
        for t in &self.targets {
            let _ = write!(out, ",{t}");
        }
        out.push('\n');
        for (f, row) in self.features.iter().zip(&data) {
            out.push_str(f);
            for v in row {
                let _ = write!(out, ",{}", fmt_num(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Pools the pieces' rows and estimates MI for each feature/target cell.
pub fn mi_table(pieces: &[&Piece], targets: &[Target], k: usize, seed: u64) -> Result<MiTable> {
    let first = pieces.first().ok_or_else(|| domain("MI table needs at least one piece"))?;
    let features = first.features.names.clone();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); features.len()];
    let mut target_cols: Vec<Vec<f64>> = vec![Vec::new(); targets.len()];
    for p in pieces {
        if p.features.names != features {
            return Err(domain(format!("piece {} has different feature columns", p.id)));
        }
        for row in &p.features.rows {
            for (c, v) in columns.iter_mut().zip(&row.values) {
                c.push(*v);
            }
        }
        for (c, t) in target_cols.iter_mut().zip(targets) {
            c.extend(p.target(*t));
        }
    }
    if target_cols.first().is_none_or(Vec::is_empty) && columns.first().is_none_or(Vec::is_empty) {
        return Err(domain("MI table needs at least one row"));
    }
    let values = columns
        .iter()
        .map(|f| target_cols.iter().map(|t| estimate_mi(f, t, k, seed)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    Ok(MiTable { features, targets: targets.to_vec(), values })
}

/// The `n` features with the largest MI for `target`, descending. Equal
/// values keep the table's (canonical) order.
pub fn select_features(table: &MiTable, target: Target, n: usize) -> Result<Vec<String>> {
    let j = table
        .targets
        .iter()
        .position(|t| *t == target)
        .ok_or_else(|| domain(format!("target {target} not in MI table")))?;
    if n > table.features.len() {
        return Err(domain(format!("cannot select {n} of {} features", table.features.len())));
    }
    let mut idx: Vec<usize> = (0..table.features.len()).collect();
    idx.sort_by(|&a, &b| table.values[b][j].total_cmp(&table.values[a][j]));
    Ok(idx.into_iter().take(n).map(|i| table.features[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn uniform(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    fn gaussian_pair(n: usize, rho: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            x.push(a);
            y.push(rho * a + (1.0 - rho * rho).sqrt() * b);
        }
        (x, y)
    }

    /// Brute-force KSG without the sorted-scan pruning.
    fn ksg_naive(x: &[f64], y: &[f64], k: usize) -> f64 {
        let n = x.len();
        let mut acc = 0.0;
        for i in 0..n {
            let mut d: Vec<f64> =
                (0..n).filter(|&j| j != i).map(|j| (x[i] - x[j]).abs().max((y[i] - y[j]).abs())).collect();
            d.sort_by(f64::total_cmp);
            let eps = d[k - 1];
            let nx = (0..n).filter(|&j| j != i && (x[i] - x[j]).abs() < eps).count();
            let ny = (0..n).filter(|&j| j != i && (y[i] - y[j]).abs() < eps).count();
            acc += digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0);
        }
        digamma(k as f64) + digamma(n as f64) - acc / n as f64
    }

    #[test]
    fn pruned_search_matches_brute_force() {
        let (x, y) = gaussian_pair(300, 0.6, 9);
        let (a, b) = (ksg(&x, &y, 3), ksg_naive(&x, &y, 3));
        assert!((a - b).abs() < 1e-12, "{a} {b}");
    }

    #[test]
    fn independent_uniforms() {
        let mi = estimate_mi(&uniform(1000, 1), &uniform(1000, 2), 3, 0).unwrap();
        assert!(mi < 0.05, "{mi}");
    }

    #[test]
    fn correlated_gaussians() {
        let (x, y) = gaussian_pair(5000, 0.9, 3);
        let truth = -0.5 * (1.0f64 - 0.81).ln();
        let mi = estimate_mi(&x, &y, 3, 0).unwrap();
        assert!((mi - truth).abs() < 0.1, "{mi} vs {truth}");
        assert!((truth - 0.8304).abs() < 1e-4);
    }

    #[test]
    fn identity_beats_noisy_copy() {
        let x = uniform(500, 4);
        let noise = uniform(500, 5);
        let noisy: Vec<f64> = x.iter().zip(&noise).map(|(a, b)| a + 0.3 * b).collect();
        let same = estimate_mi(&x, &x, 3, 0).unwrap();
        assert!(same >= estimate_mi(&x, &noisy, 3, 0).unwrap());
    }

    #[test]
    fn symmetric_and_rank_invariant() {
        let (x, y) = gaussian_pair(2000, 0.7, 11);
        let a = estimate_mi(&x, &y, 3, 7).unwrap();
        let b = estimate_mi(&y, &x, 3, 7).unwrap();
        assert!((a - b).abs() < 1e-9);
        let bin: Vec<f64> = x.iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect();
        let c = estimate_mi(&bin, &y, 3, 7).unwrap();
        let d = estimate_mi(&y, &bin, 3, 7).unwrap();
        assert!((c - d).abs() < 1e-9);
    }

    #[test]
    fn discrete_continuous_variant() {
        // y depends on the label through its mean; the label carries at most ln 2
        let labels: Vec<f64> = (0..2000).map(|i| (i % 2) as f64).collect();
        let noise = uniform(2000, 8);
        let y: Vec<f64> = labels.iter().zip(&noise).map(|(l, u)| l * 10.0 + u).collect();
        let mi = estimate_mi(&labels, &y, 3, 0).unwrap();
        assert!((mi - 2f64.ln()).abs() < 0.02, "{mi}");
        let indep = estimate_mi(&labels, &noise, 3, 0).unwrap();
        assert!(indep < 0.02, "{indep}");
        // two balanced binaries, identical: ln 2
        assert!((estimate_mi(&labels, &labels, 3, 0).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn edge_cases() {
        assert_eq!(estimate_mi(&[1.0; 20], &uniform(20, 1), 3, 0).unwrap(), 0.0);
        assert!(estimate_mi(&[1.0; 7], &[1.0; 7], 3, 0).is_err());
        assert!(estimate_mi(&[1.0; 10], &[1.0; 9], 3, 0).is_err());
        let ties: Vec<f64> = (0..100).map(|i| (i % 5) as f64).collect();
        let v = estimate_mi(&ties, &ties, 3, 0).unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }

    fn piece(id: &str, cols: &[(&str, Vec<f64>)], d_vel: &[f64]) -> Piece {
        use crate::performance_params::TargetRow;
        use crate::score_features::{FeatureMatrix, FeatureRow};
        let n = d_vel.len();
        let features = FeatureMatrix {
            names: cols.iter().map(|(n, _)| n.to_string()).collect(),
            rows: (0..n)
                .map(|i| FeatureRow {
                    frame_index: i,
                    beat: i as f64,
                    values: cols.iter().map(|(_, c)| c[i]).collect(),
                })
                .collect(),
        };
        let targets = (0..n)
            .map(|i| TargetRow { frame_index: i, beat: i as f64, bpr: 1.0, d_bpr: 0.0, vel: 0.5, d_vel: d_vel[i] })
            .collect();
        Piece::new(id, features, targets).unwrap()
    }

    #[test]
    fn table_and_selection() {
        let t = uniform(400, 20);
        let other = uniform(400, 21);
        let p = piece("a", &[("f1", t.clone()), ("f2", other.clone()), ("flat", vec![0.5; 400])], &t);
        let table = mi_table(&[&p], &[Target::DVel], 3, 0).unwrap();
        let norm = table.normalized();
        assert_eq!(norm[0][0], 1.0);
        assert!(norm[1][0] < 0.1, "{}", norm[1][0]);
        assert_eq!(table.values[2][0], 0.0);
        assert_eq!(table.value("f1", Target::DVel), Some(estimate_mi(&t, &t, 3, 0).unwrap()));

        assert_eq!(select_features(&table, Target::DVel, 1).unwrap(), vec!["f1"]);
        let all = select_features(&table, Target::DVel, 3).unwrap();
        assert_eq!(all, vec!["f1", "f2", "flat"]);
        for n in 0..=3 {
            assert_eq!(select_features(&table, Target::DVel, n).unwrap(), all[..n].to_vec());
        }
        assert!(select_features(&table, Target::Bpr, 1).is_err());
        assert!(select_features(&table, Target::DVel, 4).is_err());

        let tie = MiTable {
            features: vec!["b".into(), "a".into()],
            targets: vec![Target::Vel],
            values: vec![vec![0.3], vec![0.3]],
        };
        assert_eq!(select_features(&tie, Target::Vel, 2).unwrap(), vec!["b", "a"]);
        assert!(mi_table(&[], &[Target::Vel], 3, 0).is_err());

        let csv = table.to_csv(true, &["k=3".into()]);
        assert!(csv.starts_with("# k=3\nfeature,d_vel\nf1,1\n"));
    }

    #[test]
    fn piece_sampling() {
        assert_eq!(sample_pieces(10, 0.2, 1).unwrap().len(), 2);
        assert_eq!(sample_pieces(3, 0.2, 1).unwrap().len(), 1);
        assert_eq!(sample_pieces(10, 0.2, 5).unwrap(), sample_pieces(10, 0.2, 5).unwrap());
        assert!(sample_pieces(0, 0.2, 1).is_err());
        assert!(sample_pieces(5, 0.0, 1).is_err());
    }
}
