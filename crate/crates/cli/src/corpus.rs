//! Locating and loading per-piece files in a directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tension_core::dataset::Piece;
use tension_core::performance_params::read_targets_csv;
use tension_core::score_features::FeatureMatrix;

use crate::manifest::RunManifest;

pub const SCORE_SUFFIX: &str = ".score.tsv";
pub const MATCH_SUFFIX: &str = ".match.tsv";
pub const FEATURES_SUFFIX: &str = ".features.csv";
pub const TARGETS_SUFFIX: &str = ".targets.csv";

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Reads a file and records its digest in the manifest.
pub fn read_input(path: &Path, manifest: &mut RunManifest) -> Result<String> {
    let text = read(path)?;
    manifest.input(path, text.as_bytes());
    Ok(text)
}

/// Piece ids of files in `dir` ending with `suffix`, sorted.
pub fn ids_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(suffix) {
            if !id.is_empty() && !id.starts_with('.') {
                ids.push(id.to_string());
            }
        }
    }
    ids.sort();
    if ids.is_empty() {
        bail!("no *{suffix} files in {}", dir.display());
    }
    Ok(ids)
}

pub fn piece_path(dir: &Path, id: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{id}{suffix}"))
}

/// Strips a known suffix (or the extension) from a file name.
pub fn id_from_path(path: &Path, suffix: &str) -> String {
    let name = crate::manifest::file_name(path);
    match name.strip_suffix(suffix) {
        Some(id) => id.to_string(),
        None => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or(name),
    }
}

/// Loads every `<id>.features.csv` / `<id>.targets.csv` pair in `dir`.
pub fn load_dataset(dir: &Path, manifest: &mut RunManifest) -> Result<Vec<Piece>> {
    let ids = ids_with_suffix(dir, FEATURES_SUFFIX)?;
    ids.iter()
        .map(|id| {
            let fpath = piece_path(dir, id, FEATURES_SUFFIX);
            let tpath = piece_path(dir, id, TARGETS_SUFFIX);
            let features = FeatureMatrix::from_csv(&read_input(&fpath, manifest)?)
                .with_context(|| format!("parsing {}", fpath.display()))?;
            let targets = read_targets_csv(&read_input(&tpath, manifest)?)
                .with_context(|| format!("parsing {}", tpath.display()))?;
            Piece::new(id.clone(), features, targets).with_context(|| format!("piece {id}"))
        })
        .collect()
}
