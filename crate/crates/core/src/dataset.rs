//! A piece as the model sees it: aligned feature rows and target rows.

use crate::error::{validation, Result};
use crate::performance_params::{targets, Target, TargetRow};
use crate::score_features::{assemble_features, FeatureMatrix, Groups};
use crate::spiral_array::SpiralParams;
use crate::symbolic_io::{group_onsets, Performance, Score};
use crate::tension::{tension_track, WindowConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub id: String,
    pub features: FeatureMatrix,
    pub targets: Vec<TargetRow>,
}

impl Piece {
    /// Checks that feature and target rows describe the same frames.
    pub fn new(id: impl Into<String>, features: FeatureMatrix, targets: Vec<TargetRow>) -> Result<Self> {
        let id = id.into();
        if features.rows.len() != targets.len() {
            return Err(validation(format!(
                "piece {id}: {} feature rows but {} target rows",
                features.rows.len(),
                targets.len()
            )));
        }
        if let Some((f, t)) = features.rows.iter().zip(&targets).find(|(f, t)| f.frame_index != t.frame_index) {
            return Err(validation(format!(
                "piece {id}: feature frame {} aligned with target frame {}",
                f.frame_index, t.frame_index
            )));
        }
        Ok(Self { id, features, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn target(&self, t: Target) -> Vec<f64> {
        self.targets.iter().map(|r| r.get(t)).collect()
    }

    /// Input sequence restricted to the named columns.
    pub fn inputs(&self, names: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(self.features.select(names)?.rows.into_iter().map(|r| r.values).collect())
    }
}

/// Full feature matrix (all groups) for every onset frame of a score.
pub fn score_features(
    score: &Score,
    window: &WindowConfig,
    params: &SpiralParams,
    groups: Groups,
) -> Result<FeatureMatrix> {
    let frames = group_onsets(score);
    let tension = if groups.tension { Some(tension_track(score, window, params)?) } else { None };
    assemble_features(score, &frames, tension.as_deref(), groups)
}

/// Features and targets for a performed score, restricted to frames that
/// have performed notes.
pub fn extract_piece(
    id: &str,
    score: &Score,
    performance: &Performance,
    window: &WindowConfig,
    params: &SpiralParams,
) -> Result<Piece> {
    let features = score_features(score, window, params, Groups::ALL)?;
    let rows = targets(score, performance)?;
    let kept: Vec<usize> = rows.iter().map(|r| r.frame_index).collect();
    Piece::new(id, features.retain_frames(&kept)?, rows)
}
