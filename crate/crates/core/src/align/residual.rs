//! Feature-metric residuals `F'(p') - F(p)` over a sparse point set, their
//! Jacobians with respect to a left-composed pose increment, and Huber
//! weighting.

use nalgebra::{Matrix2x6, Vector2, Vector3, Vector6};
use rayon::prelude::*;

use super::config::LmConfig;
use super::lm::LmProblem;
use super::normal::{Jacobian, NormalEquations};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::geometry::{hat, unproject, CameraIntrinsics, SE3Pose, Z_MIN};

/// A reference pixel with known depth. Pixel coordinates are full-resolution
/// (level 4) unless stated otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparsePoint {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

impl SparsePoint {
    pub fn new(u: f64, v: f64, depth: f64) -> Self {
        SparsePoint { pixel: Vector2::new(u, v), depth }
    }

    /// The same point in the coordinates of pyramid level `level`.
    pub fn at_level(&self, level: usize) -> SparsePoint {
        SparsePoint { pixel: self.pixel * crate::geometry::level_scale(level), depth: self.depth }
    }
}

/// IRLS weight of the Huber norm for a residual block of norm `s`.
#[inline]
pub fn huber_weight(s: f64, gamma: f64) -> f64 {
    if s <= gamma {
        1.0
    } else {
        gamma / s
    }
}

/// Huber norm: `s^2 / 2` up to `gamma`, linear beyond.
#[inline]
pub fn huber_cost(s: f64, gamma: f64) -> f64 {
    if s <= gamma {
        0.5 * s * s
    } else {
        gamma * (s - 0.5 * gamma)
    }
}

/// One weight per point, from the norm of its `channels`-long residual block.
pub fn huber_weights(residuals: &[f64], channels: usize, gamma: f64) -> Vec<f64> {
    residuals.chunks_exact(channels).map(|block| huber_weight(block.iter().map(|x| x * x).sum::<f64>().sqrt(), gamma)).collect()
}

/// 2x6 derivative of the projected pixel of `x` (target camera frame) with
/// respect to a left-composed twist `(v, w)` at zero.
pub fn projection_jacobian(x: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x6<f64> {
    let iz = 1.0 / x.z;
    let iz2 = iz * iz;
    let dpi = nalgebra::Matrix2x3::new(k.fx * iz, 0.0, -k.fx * x.x * iz2, 0.0, k.fy * iz, -k.fy * x.y * iz2);
    let mut j = Matrix2x6::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&dpi);
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-dpi * hat(x)));
    j
}

#[derive(Clone, Debug, PartialEq)]
pub struct Residuals {
    /// Residual blocks of the valid points, concatenated.
    pub values: Vec<f64>,
    pub valid_mask: Vec<bool>,
    pub channels: usize,
    pub energy: f64,
}

impl Residuals {
    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|v| **v).count()
    }
}

/// Everything the solver knows about one linearization.
#[derive(Clone, Debug, PartialEq)]
pub struct LmState {
    pub residuals: Residuals,
    pub jacobian: Jacobian,
    pub weights: Vec<f64>,
    pub system: NormalEquations,
    pub lambda: f64,
}

enum PointEval {
    Valid {
        cost: f64,
        system: NormalEquations,
    },
    ValidCost(f64),
    /// Reference valid, target not.
    OutOfView,
    /// Reference sample itself unavailable; never contributes.
    Unused,
}

/// The alignment energy for one pyramid level.
///
/// Reference samples and back-projected points are cached at construction;
/// each evaluation only warps and samples the target map.
pub struct LevelProblem<'a> {
    target: &'a FeatureMap,
    k: CameraIntrinsics,
    points_3d: Vec<Vector3<f64>>,
    ref_values: Vec<f64>,
    ref_valid: Vec<bool>,
    channels: usize,
    gamma: f64,
    min_valid: usize,
    out_of_view_cost: f64,
    parallel: bool,
}

impl<'a> LevelProblem<'a> {
    /// `points` must already be in this level's pixel coordinates, matching `k`.
    pub fn new(
        reference: &FeatureMap,
        target: &'a FeatureMap,
        points: &[SparsePoint],
        k: &CameraIntrinsics,
        config: &LmConfig,
    ) -> Result<Self> {
        if reference.channels() != target.channels() {
            return Err(Error::DimensionMismatch(format!("reference has {} channels, target {}", reference.channels(), target.channels())));
        }
        let d = reference.channels();
        let mut points_3d = Vec::with_capacity(points.len());
        let mut ref_values = vec![0.0; points.len() * d];
        let mut ref_valid = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            points_3d.push(unproject(&p.pixel, p.depth, k)?);
            ref_valid.push(reference.sample_into(p.pixel.x, p.pixel.y, &mut ref_values[i * d..(i + 1) * d], None, None));
        }
        Ok(LevelProblem {
            target,
            k: *k,
            points_3d,
            ref_values,
            ref_valid,
            channels: d,
            gamma: config.huber_gamma,
            min_valid: config.min_valid_points,
            out_of_view_cost: huber_cost(config.out_of_view_residual, config.huber_gamma),
            parallel: config.parallel,
        })
    }

    pub fn len(&self) -> usize {
        self.points_3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points_3d.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Writes the residual block of point `i` (and optionally the `D` Jacobian
    /// rows). Returns `None` if the point does not project validly.
    fn point_terms(&self, i: usize, pose: &SE3Pose, r: &mut [f64], grads: Option<(&mut [f64], &mut [f64])>) -> Option<Vector3<f64>> {
        if !self.ref_valid[i] {
            return None;
        }
        let x = pose.transform_point(&self.points_3d[i]);
        if !(x.z > Z_MIN) {
            return None;
        }
        let u = self.k.fx * x.x / x.z + self.k.cx;
        let v = self.k.fy * x.y / x.z + self.k.cy;
        let ok = match grads {
            Some((du, dv)) => self.target.sample_into(u, v, r, Some(du), Some(dv)),
            None => self.target.sample_into(u, v, r, None, None),
        };
        if !ok {
            return None;
        }
        let d = self.channels;
        for (ri, fi) in r.iter_mut().zip(&self.ref_values[i * d..(i + 1) * d]) {
            *ri -= fi;
        }
        Some(x)
    }

    fn eval_point(&self, i: usize, pose: &SE3Pose, with_system: bool) -> PointEval {
        let d = self.channels;
        let mut r = vec![0.0; d];
        let mut du = vec![0.0; d];
        let mut dv = vec![0.0; d];
        let grads = if with_system { Some((du.as_mut_slice(), dv.as_mut_slice())) } else { None };
        let Some(x) = self.point_terms(i, pose, &mut r, grads) else {
            return if self.ref_valid[i] { PointEval::OutOfView } else { PointEval::Unused };
        };
        let s = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cost = huber_cost(s, self.gamma);
        if !with_system {
            return PointEval::ValidCost(cost);
        }
        let w = huber_weight(s, self.gamma);
        let jp = projection_jacobian(&x, &self.k);
        let mut system = NormalEquations::zeros();
        for ch in 0..d {
            let row: Vector6<f64> = (jp.row(0) * du[ch] + jp.row(1) * dv[ch]).transpose();
            system.accumulate(&row, r[ch], w);
        }
        PointEval::Valid { cost, system }
    }

    fn eval_all(&self, pose: &SE3Pose, with_system: bool) -> Vec<PointEval> {
        if self.parallel {
            (0..self.len()).into_par_iter().map(|i| self.eval_point(i, pose, with_system)).collect()
        } else {
            (0..self.len()).map(|i| self.eval_point(i, pose, with_system)).collect()
        }
    }

    /// Sums per-point terms in index order so that parallel and sequential
    /// evaluation agree bit for bit.
    fn reduce(&self, evals: &[PointEval]) -> Result<(f64, NormalEquations, usize)> {
        let mut energy = 0.0;
        let mut system = NormalEquations::zeros();
        let mut valid = 0;
        for e in evals {
            match e {
                PointEval::Valid { cost, system: s } => {
                    energy += cost;
                    system.add(s);
                    valid += 1;
                }
                PointEval::ValidCost(cost) => {
                    energy += cost;
                    valid += 1;
                }
                PointEval::OutOfView => energy += self.out_of_view_cost,
                PointEval::Unused => {}
            }
        }
        if valid < self.min_valid {
            return Err(Error::InsufficientOverlap { valid, required: self.min_valid });
        }
        system.symmetrize();
        Ok((energy, system, valid))
    }

    pub fn residuals(&self, pose: &SE3Pose) -> Result<Residuals> {
        let d = self.channels;
        let mut values = Vec::with_capacity(self.len() * d);
        let mut valid_mask = Vec::with_capacity(self.len());
        let mut energy = 0.0;
        let mut r = vec![0.0; d];
        for i in 0..self.len() {
            let ok = self.point_terms(i, pose, &mut r, None).is_some();
            valid_mask.push(ok);
            if ok {
                values.extend_from_slice(&r);
                energy += huber_cost(r.iter().map(|x| x * x).sum::<f64>().sqrt(), self.gamma);
            } else if self.ref_valid[i] {
                energy += self.out_of_view_cost;
            }
        }
        let res = Residuals { values, valid_mask, channels: d, energy };
        let valid = res.valid_count();
        if valid < self.min_valid {
            return Err(Error::InsufficientOverlap { valid, required: self.min_valid });
        }
        Ok(res)
    }

    /// Jacobian rows of the valid points, in the order of `residuals`.
    pub fn jacobian(&self, pose: &SE3Pose) -> Result<Jacobian> {
        let d = self.channels;
        let mut rows = Vec::new();
        let (mut r, mut du, mut dv) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        for i in 0..self.len() {
            if let Some(x) = self.point_terms(i, pose, &mut r, Some((&mut du, &mut dv))) {
                let jp = projection_jacobian(&x, &self.k);
                for ch in 0..d {
                    rows.push((jp.row(0) * du[ch] + jp.row(1) * dv[ch]).transpose());
                }
            }
        }
        Ok(Jacobian { rows, channels: d })
    }

    /// Full linearization with explicit `r`, `J` and `W`.
    pub fn state(&self, pose: &SE3Pose, lambda: f64) -> Result<LmState> {
        let residuals = self.residuals(pose)?;
        let jacobian = self.jacobian(pose)?;
        let weights = huber_weights(&residuals.values, self.channels, self.gamma);
        let system = super::normal::build_normal_equations(&jacobian, &weights, &residuals.values)?;
        Ok(LmState { residuals, jacobian, weights, system, lambda })
    }
}

impl LmProblem for LevelProblem<'_> {
    fn energy(&self, pose: &SE3Pose) -> Result<f64> {
        let evals = self.eval_all(pose, false);
        Ok(self.reduce(&evals)?.0)
    }

    fn linearize(&self, pose: &SE3Pose) -> Result<(f64, NormalEquations, usize)> {
        let evals = self.eval_all(pose, true);
        self.reduce(&evals)
    }
}

/// Residuals of `points` (given in the coordinates of `k`) at `pose`.
pub fn compute_residuals(
    reference: &FeatureMap,
    target: &FeatureMap,
    points: &[SparsePoint],
    pose: &SE3Pose,
    k: &CameraIntrinsics,
    config: &LmConfig,
) -> Result<Residuals> {
    LevelProblem::new(reference, target, points, k, config)?.residuals(pose)
}

/// Jacobian of the residuals with respect to a left-composed twist. Only
/// the target map enters; the reference is sampled for validity masking.
pub fn compute_jacobian(
    reference: &FeatureMap,
    target: &FeatureMap,
    points: &[SparsePoint],
    pose: &SE3Pose,
    k: &CameraIntrinsics,
    config: &LmConfig,
) -> Result<Jacobian> {
    LevelProblem::new(reference, target, points, k, config)?.jacobian(pose)
}
