//! Per-level LM and the coarse-to-fine controller.

use serde::{Deserialize, Serialize};

use super::config::LmConfig;
use super::lm::{run_lm, LevelStats, Termination};
use super::residual::{LevelProblem, SparsePoint};
use crate::error::Result;
use crate::features::{FeatureMap, FeaturePyramid};
use crate::geometry::{CameraIntrinsics, SE3Pose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    #[serde(with = "crate::geometry::pose_io::serde_pose")]
    pub pose: SE3Pose,
    pub levels: Vec<LevelStats>,
    pub converged: bool,
    pub failure: Option<String>,
}

impl AlignmentResult {
    pub fn total_iterations(&self) -> usize {
        self.levels.iter().map(|l| l.iterations).sum()
    }
}

/// LM on a single level. `points` and `k` are in that level's coordinates.
/// A level that cannot start returns `init` with the reason in the stats.
pub fn align_level(
    reference: &FeatureMap,
    target: &FeatureMap,
    points: &[SparsePoint],
    init: &SE3Pose,
    k: &CameraIntrinsics,
    config: &LmConfig,
    level: usize,
) -> Result<(SE3Pose, LevelStats)> {
    let problem = LevelProblem::new(reference, target, points, k, config)?;
    Ok(run_lm(&problem, init, config, level))
}

/// Runs the configured levels coarse to fine, each seeded with the previous
/// result. Points are given at full resolution and `k` describes level 4.
/// Lambda restarts at `lambda_init` on every level.
pub fn align_coarse_to_fine(
    reference: &FeaturePyramid,
    target: &FeaturePyramid,
    points: &[SparsePoint],
    init: &SE3Pose,
    k: &CameraIntrinsics,
    config: &LmConfig,
) -> Result<AlignmentResult> {
    config.validate()?;
    let mut pose = *init;
    let mut levels = Vec::with_capacity(config.levels.len());
    for &level in &config.levels {
        let kl = k.at_level(level);
        let pts: Vec<SparsePoint> = points.iter().map(|p| p.at_level(level)).collect();
        let (next, stats) = align_level(reference.level(level), target.level(level), &pts, &pose, &kl, config, level)?;
        pose = next;
        levels.push(stats);
    }
    let last = levels.last().expect("at least one level");
    let converged = last.failure.is_none() && last.termination != Termination::MaxIterations;
    let failure = if levels.iter().all(|l| l.failure.is_some()) {
        Some(levels.iter().map(|l| format!("level {}: {}", l.level, l.failure.as_deref().unwrap_or(""))).collect::<Vec<_>>().join("; "))
    } else if !converged {
        Some(match &last.failure {
            Some(f) => format!("level {}: {f}", last.level),
            None => format!("level {}: iteration cap reached", last.level),
        })
    } else {
        None
    };
    Ok(AlignmentResult { pose, levels, converged, failure })
}
