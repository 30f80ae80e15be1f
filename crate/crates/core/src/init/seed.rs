//! Coarse pose seeding from level-1 feature correlation.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::correlation::{correlation_map, stack_neighbourhood};
use crate::align::{LevelProblem, LmConfig, LmProblem, SparsePoint};
use crate::error::{Error, Result};
use crate::features::FeaturePyramid;
use crate::geometry::{rotation_about, unproject, CameraIntrinsics, SE3Pose, Z_MIN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrInitConfig {
    /// Pyramid level the correlation and the energy are evaluated on.
    pub level: usize,
    /// Each descriptor stacks the `(2r+1)^2` neighbourhood of a pixel.
    pub neighbourhood_radius: usize,
    /// Yaw and pitch span `[-range, range]` in steps of `step`, degrees.
    pub angle_range_deg: f64,
    pub angle_step_deg: f64,
    /// Translation along each axis spans `[-range, range]` in `steps` values.
    pub translation_range: f64,
    pub translation_steps: usize,
    /// Candidates whose predicted median flow is further than this from the
    /// measured flow (pixels of `level`) are not evaluated.
    pub flow_tolerance_px: f64,
}

impl Default for CorrInitConfig {
    fn default() -> Self {
        CorrInitConfig {
            level: 1,
            neighbourhood_radius: 1,
            angle_range_deg: 6.0,
            angle_step_deg: 1.5,
            translation_range: 0.5,
            translation_steps: 5,
            flow_tolerance_px: 1.0,
        }
    }
}

impl CorrInitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=crate::geometry::NUM_LEVELS).contains(&self.level) {
            return Err(Error::Config(format!("correlation level {} is not in 1..=4", self.level)));
        }
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.angle_range_deg) || !ok(self.translation_range) || !ok(self.flow_tolerance_px) {
            return Err(Error::Config("grid ranges and flow tolerance must be finite and non-negative".into()));
        }
        if !(self.angle_step_deg.is_finite() && self.angle_step_deg > 0.0) || self.translation_steps == 0 {
            return Err(Error::Config("grid steps must be positive".into()));
        }
        Ok(())
    }

    fn angles(&self) -> Vec<f64> {
        let n = (self.angle_range_deg / self.angle_step_deg + 1e-9).floor() as i64;
        (-n..=n).map(|k| (k as f64 * self.angle_step_deg).to_radians()).collect()
    }

    fn offsets(&self) -> Vec<f64> {
        let n = self.translation_steps;
        if n == 1 {
            return vec![0.0];
        }
        (0..n).map(|k| -self.translation_range + 2.0 * self.translation_range * k as f64 / (n - 1) as f64).collect()
    }

    /// Identity first, then every yaw, pitch and translation combination.
    pub fn candidates(&self) -> Vec<SE3Pose> {
        let angles = self.angles();
        let offsets = self.offsets();
        let mut out = vec![SE3Pose::identity()];
        for &yaw in &angles {
            for &pitch in &angles {
                let r = rotation_about(&Vector3::y(), yaw) * rotation_about(&Vector3::x(), pitch);
                for &tx in &offsets {
                    for &ty in &offsets {
                        for &tz in &offsets {
                            out.push(SE3Pose::from_parts_unchecked(r, Vector3::new(tx, ty, tz)));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrInit {
    pub pose: SE3Pose,
    /// Median correlation flow in pixels of the seeding level.
    pub flow: Option<Vector2<f64>>,
    /// Level energy of the returned pose and of identity.
    pub energy: Option<f64>,
    pub identity_energy: Option<f64>,
    /// Candidates whose energy was evaluated, identity included.
    pub evaluated: usize,
    /// Why identity was returned without a search, if it was.
    pub fallback: Option<String>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Component-wise median of the correlation-argmax displacements at the
/// points' nearest pixels.
pub fn median_correlation_flow(
    pyr: &FeaturePyramid,
    pyr_prime: &FeaturePyramid,
    points: &[SparsePoint],
    config: &CorrInitConfig,
) -> Result<Option<Vector2<f64>>> {
    let level = config.level;
    let f = stack_neighbourhood(pyr.level(level), config.neighbourhood_radius);
    let fp = stack_neighbourhood(pyr_prime.level(level), config.neighbourhood_radius);
    let corr = correlation_map(&f, &fp)?;
    let (mut du, mut dv) = (Vec::new(), Vec::new());
    for p in points {
        let q = p.at_level(level).pixel;
        let (i, j) = (q.x.round(), q.y.round());
        if i < 0.0 || j < 0.0 || i as usize >= corr.width() || j as usize >= corr.height() {
            continue;
        }
        if let Some((ti, tj)) = corr.argmax(i as usize, j as usize) {
            du.push(ti as f64 - i);
            dv.push(tj as f64 - j);
        }
    }
    if du.is_empty() {
        return Ok(None);
    }
    Ok(Some(Vector2::new(median(&mut du), median(&mut dv))))
}

fn predicted_flow(pose: &SE3Pose, points: &[(Vector2<f64>, Vector3<f64>)], k: &CameraIntrinsics) -> Option<Vector2<f64>> {
    let (mut du, mut dv) = (Vec::with_capacity(points.len()), Vec::with_capacity(points.len()));
    for (p, x) in points {
        let y = pose.transform_point(x);
        if y.z > Z_MIN {
            du.push(k.fx * y.x / y.z + k.cx - p.x);
            dv.push(k.fy * y.y / y.z + k.cy - p.y);
        }
    }
    (!du.is_empty()).then(|| Vector2::new(median(&mut du), median(&mut dv)))
}

fn identity_only(reason: String, identity_energy: Option<f64>) -> CorrInit {
    log::warn!("correlation seed falls back to identity: {reason}");
    CorrInit {
        pose: SE3Pose::identity(),
        flow: None,
        energy: identity_energy,
        identity_energy,
        evaluated: identity_energy.is_some() as usize,
        fallback: Some(reason),
    }
}

/// Correlation-guided grid search for an initial pose. `points` are at full
/// resolution and `k` describes level 4. Never fails: any problem yields the
/// identity pose with the reason recorded.
pub fn corr_pose_init_detailed(
    pyr: &FeaturePyramid,
    pyr_prime: &FeaturePyramid,
    points: &[SparsePoint],
    k: &CameraIntrinsics,
    lm: &LmConfig,
    config: &CorrInitConfig,
) -> CorrInit {
    if let Err(e) = config.validate() {
        return identity_only(e.to_string(), None);
    }
    let level = config.level;
    let kl = k.at_level(level);
    let pts: Vec<SparsePoint> = points.iter().map(|p| p.at_level(level)).collect();
    // Candidates are scored concurrently, so each energy runs sequentially.
    let lm_seq = LmConfig { parallel: false, ..lm.clone() };
    let problem = match LevelProblem::new(pyr.level(level), pyr_prime.level(level), &pts, &kl, &lm_seq) {
        Ok(p) => p,
        Err(e) => return identity_only(e.to_string(), None),
    };
    let identity_energy = problem.energy(&SE3Pose::identity()).ok();
    let flow = match median_correlation_flow(pyr, pyr_prime, points, config) {
        Ok(Some(f)) => f,
        Ok(None) => return identity_only("no correlation peaks at the points".into(), identity_energy),
        Err(e) => return identity_only(e.to_string(), identity_energy),
    };
    let lifted: Vec<(Vector2<f64>, Vector3<f64>)> =
        pts.iter().filter_map(|p| unproject(&p.pixel, p.depth, &kl).ok().map(|x| (p.pixel, x))).collect();

    let candidates = config.candidates();
    let scored: Vec<(usize, f64)> = candidates
        .par_iter()
        .enumerate()
        .filter_map(|(idx, pose)| {
            if idx > 0 {
                let pred = predicted_flow(pose, &lifted, &kl)?;
                if (pred - flow).norm() > config.flow_tolerance_px {
                    return None;
                }
            }
            problem.energy(pose).ok().map(|e| (idx, e))
        })
        .collect();
    // Strictly lower energy wins, so ties keep the earliest index.
    let best = scored.iter().fold(None::<(usize, f64)>, |acc, &(i, e)| match acc {
        Some((_, be)) if be <= e => acc,
        _ => Some((i, e)),
    });
    let (pose, energy) = match best {
        Some((i, e)) if identity_energy.is_none_or(|ie| e < ie) => (candidates[i], Some(e)),
        _ => (SE3Pose::identity(), identity_energy),
    };
    CorrInit { pose, flow: Some(flow), energy, identity_energy, evaluated: scored.len(), fallback: None }
}

/// The pose of [`corr_pose_init_detailed`].
pub fn corr_pose_init(
    pyr: &FeaturePyramid,
    pyr_prime: &FeaturePyramid,
    points: &[SparsePoint],
    k: &CameraIntrinsics,
    lm: &LmConfig,
    config: &CorrInitConfig,
) -> SE3Pose {
    corr_pose_init_detailed(pyr, pyr_prime, points, k, lm, config).pose
}
