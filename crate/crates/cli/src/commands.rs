use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use rayon::prelude::*;
use tension_core::brnn::{self, read_model, write_model, Example, ModelFile};
use tension_core::csv_io::{comment_block, fmt_num};
use tension_core::dataset::{score_features, Piece};
use tension_core::eval_stats::{
    per_piece_csv, results_csv, run_cv, sensitivity as sensitivity_matrix, Comparison, CvConfig, EvalResult,
    FeatureSet, Standardizer,
};
use tension_core::mi_select::{mi_table, sample_pieces, select_features, MiTable};
use tension_core::performance_params::{targets, targets_csv, Target};
use tension_core::score_features::Groups;
use tension_core::symbolic_io::{parse_performance, parse_score, write_performance, write_score};
use tension_core::synth::{synth_corpus, Rule, SynthConfig};

use crate::corpus::{self, FEATURES_SUFFIX, MATCH_SUFFIX, SCORE_SUFFIX, TARGETS_SUFFIX};
use crate::manifest::{file_name, write_atomic, RunManifest};
use crate::{FsOpts, ScoreOpts, TrainOpts};

/// Writes the rendered outputs, then the manifest.
fn finish(out_dir: &Path, manifest_name: &str, manifest: &RunManifest, files: Vec<(String, String)>) -> Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for (name, body) in &files {
        write_atomic(&out_dir.join(name), body).map_err(|e| anyhow!(e))?;
    }
    write_atomic(&out_dir.join(manifest_name), &manifest.render()).map_err(|e| anyhow!(e))?;
    info!("wrote {} files to {}", files.len() + 1, out_dir.display());
    Ok(())
}

fn kv_lines(text: String) -> Vec<String> {
    text.lines().map(str::to_string).collect()
}

struct ExtractJob {
    id: String,
    score_path: PathBuf,
    score: String,
    matched: Option<(PathBuf, String)>,
}

pub fn extract(
    score: Option<PathBuf>,
    matched: Option<PathBuf>,
    corpus_dir: Option<PathBuf>,
    id: Option<String>,
    groups: Groups,
    opts: &ScoreOpts,
    out_dir: &Path,
) -> Result<()> {
    let mut m = RunManifest::new("extract");
    let window = opts.window_config()?;
    let params = opts.spiral(&mut m)?;
    m.config(kv_lines(params.to_kv()));
    m.config(kv_lines(window.to_kv()));
    m.config([format!("groups={groups}")]);

    let mut jobs = Vec::new();
    let manifest_name;
    match (score, corpus_dir) {
        (Some(score_path), _) => {
            let id = id.unwrap_or_else(|| corpus::id_from_path(&score_path, SCORE_SUFFIX));
            manifest_name = format!("{id}.extract.manifest.txt");
            let score = corpus::read_input(&score_path, &mut m)?;
            let matched = match matched {
                Some(p) => Some((p.clone(), corpus::read_input(&p, &mut m)?)),
                None => None,
            };
            jobs.push(ExtractJob { id, score_path, score, matched });
        }
        (None, Some(dir)) => {
            manifest_name = "extract.manifest.txt".to_string();
            for id in corpus::ids_with_suffix(&dir, SCORE_SUFFIX)? {
                let score_path = corpus::piece_path(&dir, &id, SCORE_SUFFIX);
                let score = corpus::read_input(&score_path, &mut m)?;
                let mpath = corpus::piece_path(&dir, &id, MATCH_SUFFIX);
                let matched =
                    if mpath.exists() { Some((mpath.clone(), corpus::read_input(&mpath, &mut m)?)) } else { None };
                jobs.push(ExtractJob { id, score_path, score, matched });
            }
        }
        (None, None) => bail!("either --score or --corpus is required"),
    }
    for j in &jobs {
        m.output(&format!("{}{FEATURES_SUFFIX}", j.id));
        if j.matched.is_some() {
            m.output(&format!("{}{TARGETS_SUFFIX}", j.id));
        }
    }
    let header = m.header();
    let files: Vec<Vec<(String, String)>> = jobs
        .par_iter()
        .map(|j| -> Result<Vec<(String, String)>> {
            let score = parse_score(&j.score).with_context(|| format!("parsing {}", j.score_path.display()))?;
            let mut features = score_features(&score, &window, &params, groups)
                .with_context(|| format!("features of {}", j.score_path.display()))?;
            let mut meta = header.clone();
            meta.push(format!("piece={}", j.id));
            let mut out = Vec::new();
            if let Some((mpath, text)) = &j.matched {
                let perf = parse_performance(text, &score).with_context(|| format!("parsing {}", mpath.display()))?;
                let rows = targets(&score, &perf).with_context(|| format!("targets of {}", mpath.display()))?;
                let kept: Vec<usize> = rows.iter().map(|r| r.frame_index).collect();
                features = features.retain_frames(&kept)?;
                out.push((format!("{}{TARGETS_SUFFIX}", j.id), targets_csv(&rows, &meta)));
            }
            out.insert(0, (format!("{}{FEATURES_SUFFIX}", j.id), features.to_csv(&meta)));
            Ok(out)
        })
        .collect::<Result<_>>()?;
    finish(out_dir, &manifest_name, &m, files.into_iter().flatten().collect())
}

pub fn synth(
    pieces: usize,
    length: usize,
    seed: u64,
    rule: Rule,
    noise: f64,
    opts: &ScoreOpts,
    out_dir: &Path,
) -> Result<()> {
    let mut m = RunManifest::new("synth");
    let window = opts.window_config()?;
    let params = opts.spiral(&mut m)?;
    let cfg = SynthConfig { pieces, length, seed, rule, noise_sd: noise };
    cfg.validate()?;
    m.config(cfg.ground_truth());
    m.config(kv_lines(params.to_kv()));
    m.config(kv_lines(window.to_kv()));
    let corpus = synth_corpus(&cfg, &window, &params)?;
    for p in &corpus {
        m.output(&format!("{}{SCORE_SUFFIX}", p.id));
        m.output(&format!("{}{MATCH_SUFFIX}", p.id));
    }
    m.output("ground_truth.txt");
    let head = comment_block(&m.header());
    let mut files = Vec::new();
    for p in &corpus {
        files.push((format!("{}{SCORE_SUFFIX}", p.id), format!("{head}{}", write_score(&p.score))));
        files.push((format!("{}{MATCH_SUFFIX}", p.id), format!("{head}{}", write_performance(&p.performance))));
    }
    let mut truth = head.clone();
    for line in cfg.ground_truth() {
        let _ = writeln!(truth, "{line}");
    }
    files.push(("ground_truth.txt".to_string(), truth));
    finish(out_dir, "synth.manifest.txt", &m, files)
}

fn fs_seed(fs: &FsOpts, fallback: Option<u64>) -> Result<u64> {
    fs.fs_seed.or(fallback).ok_or_else(|| anyhow!("--fs-seed is required"))
}

/// MI on the seeded subset of pieces used for feature selection.
fn selection_table(pieces: &[Piece], targets: &[Target], fs: &FsOpts, seed: u64) -> Result<(MiTable, Vec<usize>)> {
    let subset = sample_pieces(pieces.len(), fs.fs_fraction, seed)?;
    let chosen: Vec<&Piece> = subset.iter().map(|&i| &pieces[i]).collect();
    Ok((mi_table(&chosen, targets, fs.fs_k, seed)?, subset))
}

fn fs_config(fs: &FsOpts, seed: u64) -> Vec<String> {
    vec![
        format!("fs.seed={seed}"),
        format!("fs.fraction={}", fs.fs_fraction),
        format!("fs.k={}", fs.fs_k),
        format!("fs.size={}", fs.fs_size),
    ]
}

pub fn mi(data: &Path, fs: &FsOpts, out_dir: &Path) -> Result<()> {
    let seed = fs_seed(fs, None)?;
    let mut m = RunManifest::new("mi");
    m.config(fs_config(fs, seed));
    let pieces = corpus::load_dataset(data, &mut m)?;
    let (table, subset) = selection_table(&pieces, &Target::ALL, fs, seed)?;
    let ids: Vec<&str> = subset.iter().map(|&i| pieces[i].id.as_str()).collect();
    m.config([format!("fs.pieces={}", ids.join(","))]);
    for name in ["mi.csv", "mi_normalized.csv", "selected.csv"] {
        m.output(name);
    }
    let header = m.header();
    let n = fs.fs_size.min(table.features.len());
    let mut selected = comment_block(&header);
    selected.push_str("target,rank,feature,mi\n");
    for t in Target::ALL {
        for (rank, f) in select_features(&table, t, n)?.iter().enumerate() {
            let v = table.value(f, t).unwrap_or(0.0);
            let _ = writeln!(selected, "{t},{},{f},{}", rank + 1, fmt_num(v));
        }
    }
    let files = vec![
        ("mi.csv".to_string(), table.to_csv(false, &header)),
        ("mi_normalized.csv".to_string(), table.to_csv(true, &header)),
        ("selected.csv".to_string(), selected),
    ];
    finish(out_dir, "mi.manifest.txt", &m, files)
}

fn examples(pieces: &[Piece], target: Target, names: &[String], std: &Standardizer) -> Result<Vec<Example>> {
    pieces.iter().map(|p| Ok(Example { inputs: std.apply(&p.inputs(names)?), targets: p.target(target) })).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    data: &Path,
    target: Target,
    groups: Groups,
    features: Option<Vec<String>>,
    init: Option<PathBuf>,
    seed: u64,
    opts: &TrainOpts,
    out_dir: &Path,
) -> Result<()> {
    let mut m = RunManifest::new("train");
    let cfg = opts.config(seed);
    cfg.validate()?;
    m.config([format!("target={target}")]);
    m.config(cfg.to_kv());
    let start = match &init {
        Some(path) => {
            let text = corpus::read_input(path, &mut m)?;
            Some(read_model(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => None,
    };
    let pieces = corpus::load_dataset(data, &mut m)?;
    let names: Vec<String> = match (&start, features) {
        (Some(f), _) => f.features.clone(),
        (None, Some(list)) => list,
        (None, None) => groups.feature_names().into_iter().map(str::to_string).collect(),
    };
    m.config([format!("features={}", names.join(","))]);
    let std = match &start {
        Some(f) => Standardizer { mean: f.input_mean.clone(), scale: f.input_scale.clone() },
        None => {
            let inputs: Vec<Vec<Vec<f64>>> =
                pieces.iter().map(|p| p.inputs(&names)).collect::<tension_core::Result<_>>()?;
            let seqs: Vec<&[Vec<f64>]> = inputs.iter().map(Vec::as_slice).collect();
            Standardizer::fit(&seqs, names.len())
        }
    };
    let data = examples(&pieces, target, &names, &std)?;
    let (params, log) = match start {
        Some(f) => brnn::train_from(&data, f.params, &cfg)?,
        None => brnn::train(&data, names.len(), &cfg)?,
    };
    let model_name = format!("model.{target}.txt");
    let log_name = format!("train_log.{target}.csv");
    m.output(&model_name);
    m.output(&log_name);
    let header = m.header();
    let mut meta = header.clone();
    meta.push(format!("best_epoch={}", log.best_epoch));
    let model = ModelFile { params, features: names, input_mean: std.mean, input_scale: std.scale, meta };
    let mut log_csv = comment_block(&header);
    let val_ids: Vec<&str> = log.validation_pieces.iter().map(|&i| pieces[i].id.as_str()).collect();
    let _ = writeln!(log_csv, "# validation_pieces={}", val_ids.join(","));
    let _ = writeln!(log_csv, "# best_epoch={}", log.best_epoch);
    log_csv.push_str("epoch,train_mse,val_mse\n");
    for e in &log.epochs {
        let val = e.val_mse.map(fmt_num).unwrap_or_default();
        let _ = writeln!(log_csv, "{},{},{val}", e.epoch, fmt_num(e.train_mse));
    }
    finish(
        out_dir,
        &format!("train.{target}.manifest.txt"),
        &m,
        vec![(model_name, write_model(&model)), (log_name, log_csv)],
    )
}

enum Experiment {
    /// A base set, its tension-augmented counterpart (when different).
    Pair(Groups, Option<Groups>),
    Selected,
}

fn parse_sets(sets: &[String]) -> Result<Vec<Experiment>> {
    sets.iter()
        .map(|s| {
            if s.eq_ignore_ascii_case("fs") {
                return Ok(Experiment::Selected);
            }
            let g: Groups = s.parse().with_context(|| format!("feature set {s:?}"))?;
            let plus = g.with_tension();
            Ok(Experiment::Pair(g, (plus != g).then_some(plus)))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    data: &Path,
    seed: u64,
    targets: &[Target],
    sets: &[String],
    folds: usize,
    fs: &FsOpts,
    opts: &TrainOpts,
    out_dir: &Path,
) -> Result<()> {
    if targets.is_empty() {
        bail!("no targets to evaluate");
    }
    let experiments = parse_sets(sets)?;
    let fs_seed = fs_seed(fs, Some(seed))?;
    let cv = CvConfig { folds, train: opts.config(seed) };
    cv.train.validate()?;
    let mut m = RunManifest::new("eval");
    m.config([
        format!("seed={seed}"),
        format!("targets={}", targets.iter().map(|t| t.name()).collect::<Vec<_>>().join(",")),
    ]);
    m.config([format!("sets={}", sets.join(","))]);
    m.config(cv.to_kv());
    let pieces = corpus::load_dataset(data, &mut m)?;

    let mut jobs: Vec<(Target, FeatureSet)> = Vec::new();
    let wants_fs = experiments.iter().any(|e| matches!(e, Experiment::Selected));
    let selection = if wants_fs {
        m.config(fs_config(fs, fs_seed));
        let (table, _) = selection_table(&pieces, targets, fs, fs_seed)?;
        let n = fs.fs_size.min(table.features.len());
        let mut by_target = BTreeMap::new();
        for &t in targets {
            let chosen = select_features(&table, t, n)?;
            m.config([format!("fs.selected.{t}={}", chosen.join(","))]);
            by_target.insert(t.name(), chosen);
        }
        by_target
    } else {
        BTreeMap::new()
    };
    for &t in targets {
        for e in &experiments {
            match e {
                Experiment::Pair(g, plus) => {
                    jobs.push((t, FeatureSet::Groups(*g)));
                    if let Some(p) = plus {
                        jobs.push((t, FeatureSet::Groups(*p)));
                    }
                }
                Experiment::Selected => jobs.push((t, FeatureSet::Selected(selection[t.name()].clone()))),
            }
        }
    }
    let results: Vec<EvalResult> = jobs
        .par_iter()
        .map(|(t, f)| {
            info!("cross-validating {t} with {f}");
            run_cv(&pieces, *t, f, &cv, seed).with_context(|| format!("{t} with {f}"))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut k = 0;
    for _ in targets {
        for e in &experiments {
            match e {
                Experiment::Pair(_, Some(_)) => {
                    rows.push(Comparison::paired(&results[k], &results[k + 1]));
                    k += 2;
                }
                _ => {
                    rows.push(Comparison::single(&results[k]));
                    k += 1;
                }
            }
        }
    }
    m.output("results.csv");
    m.output("per_piece_r2.csv");
    let header = m.header();
    let mut excluded = header.clone();
    for r in &results {
        if !r.excluded.is_empty() {
            excluded.push(format!("excluded.{}.{}={}", r.target, r.feature_set, r.excluded.join(",")));
        }
    }
    let files = vec![
        ("results.csv".to_string(), results_csv(&rows, &excluded)),
        ("per_piece_r2.csv".to_string(), per_piece_csv(&results, &header)),
    ];
    finish(out_dir, "eval.manifest.txt", &m, files)
}

pub fn sensitivity(model_path: &Path, data: &Path, radius: usize, out_dir: &Path) -> Result<()> {
    let mut m = RunManifest::new("sensitivity");
    m.config([format!("radius={radius}")]);
    let model = read_model(&corpus::read_input(model_path, &mut m)?)
        .with_context(|| format!("parsing {}", model_path.display()))?;
    let pieces = corpus::load_dataset(data, &mut m)?;
    let target = model
        .meta
        .iter()
        .find_map(|l| l.strip_prefix("target="))
        .map(str::to_string)
        .unwrap_or_else(|| file_name(model_path).replace(".txt", ""));
    let seqs: Vec<Vec<Vec<f64>>> =
        pieces.iter().map(|p| Ok(model.standardize(&p.inputs(&model.features)?))).collect::<Result<_>>()?;
    let matrix = sensitivity_matrix(&model.params, &seqs, &model.features, radius)?;
    let name = format!("sensitivity.{target}.csv");
    m.output(&name);
    let mut header = m.header();
    header.push(format!("target={target}"));
    finish(out_dir, &format!("sensitivity.{target}.manifest.txt"), &m, vec![(name.clone(), matrix.to_csv(&header))])
}
