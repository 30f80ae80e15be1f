//! The four point-wise loss terms and the per-point 2x2 Gauss-Newton system.
//!
//! Steps follow descent semantics: with `b = J^T r`, the damped update is
//! `p' - (H + damping I)^-1 b`, which decreases the residual.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;

/// Floor on `|H_p|` inside the log-determinant of the GN term.
pub const DET_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub pos: f64,
    pub neg: f64,
    pub gd: f64,
    pub gn: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { pos: 1.0, neg: 1.0, gd: 1.0, gn: 1.0 }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.pos, self.neg, self.gd, self.gn]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Margin `M` of the negative term, in squared feature units.
    pub margin: f64,
    /// Fixed Levenberg damping of the gradient-descent term.
    pub lambda_f: f64,
    /// Required improvement `delta` of the gradient-descent term, squared pixels.
    pub gd_margin: f64,
    /// Regularizer `epsilon` of the Gauss-Newton term.
    pub epsilon: f64,
    pub gd_radius: f64,
    pub gn_radius: f64,
    pub weights: LossWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 1.0,
            lambda_f: 2.0,
            gd_margin: 0.1,
            epsilon: 1e-6,
            gd_radius: 5.0,
            gn_radius: 1.0,
            weights: LossWeights::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.margin, self.lambda_f, self.gd_margin, self.epsilon, self.gd_radius, self.gn_radius];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config(format!("loss parameters must be finite and positive: {self:?}")));
        }
        if self.epsilon >= self.lambda_f / 1000.0 {
            return Err(Error::Config(format!("epsilon {} must be below lambda_f / 1000 = {}", self.epsilon, self.lambda_f / 1000.0)));
        }
        if self.weights.as_array().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {:?}", self.weights)));
        }
        Ok(())
    }
}

fn out_of_bounds(map: &FeatureMap, q: &Vector2<f64>) -> Error {
    Error::SampleOutOfBounds { u: q.x, v: q.y, width: map.width(), height: map.height() }
}

fn value(map: &FeatureMap, q: &Vector2<f64>) -> Result<Vec<f64>> {
    map.sample_value(q)
}

fn check_channels(f: &FeatureMap, fp: &FeatureMap) -> Result<()> {
    if f.channels() != fp.channels() {
        return Err(Error::DimensionMismatch(format!("F has {} channels, F' has {}", f.channels(), fp.channels())));
    }
    Ok(())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `||F'(p'_gt) - F(p)||^2`.
pub fn e_pos(f: &FeatureMap, fp: &FeatureMap, p: &Vector2<f64>, p_gt: &Vector2<f64>) -> Result<f64> {
    check_channels(f, fp)?;
    Ok(squared_distance(&value(fp, p_gt)?, &value(f, p)?))
}

/// `max(M - ||F'(p'_neg) - F(p)||^2, 0)`.
pub fn e_neg(f: &FeatureMap, fp: &FeatureMap, p: &Vector2<f64>, p_neg: &Vector2<f64>, margin: f64) -> Result<f64> {
    check_channels(f, fp)?;
    Ok((margin - squared_distance(&value(fp, p_neg)?, &value(f, p)?)).max(0.0))
}

/// Residual, Jacobian and normal equations of a single correspondence
/// `p -> p'` in image space.
#[derive(Clone, Debug, PartialEq)]
pub struct PointGnSystem {
    /// `F'(p') - F(p)`.
    pub r: Vec<f64>,
    /// Rows `dF'_c / dp'`, one per channel.
    pub j: Vec<Vector2<f64>>,
    /// `J^T J`.
    pub h: Matrix2<f64>,
    /// `J^T r`.
    pub b: Vector2<f64>,
}

impl PointGnSystem {
    pub fn from_parts(r: Vec<f64>, j: Vec<Vector2<f64>>) -> Self {
        let mut h = Matrix2::zeros();
        let mut b = Vector2::zeros();
        for (row, res) in j.iter().zip(&r) {
            h += row * row.transpose();
            b += row * *res;
        }
        PointGnSystem { r, j, h, b }
    }

    /// Descent step `-(H + damping I)^-1 b`; zero where the damped matrix is
    /// singular.
    pub fn step(&self, damping: f64) -> Vector2<f64> {
        let m = self.h + Matrix2::identity() * damping;
        match m.try_inverse() {
            Some(inv) => -(inv * self.b),
            None => Vector2::zeros(),
        }
    }
}

pub fn point_gn_system(f: &FeatureMap, fp: &FeatureMap, p: &Vector2<f64>, p_prime: &Vector2<f64>) -> Result<PointGnSystem> {
    check_channels(f, fp)?;
    let d = fp.channels();
    let reference = value(f, p)?;
    let (mut v, mut du, mut dv) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    if !fp.sample_into(p_prime.x, p_prime.y, &mut v, Some(&mut du), Some(&mut dv)) {
        return Err(out_of_bounds(fp, p_prime));
    }
    let r = v.iter().zip(&reference).map(|(a, b)| a - b).collect();
    let j = du.iter().zip(&dv).map(|(a, b)| Vector2::new(*a, *b)).collect();
    Ok(PointGnSystem::from_parts(r, j))
}

/// Hinge on the squared-distance improvement of one update.
pub fn gd_hinge(p_after: &Vector2<f64>, p_before: &Vector2<f64>, p_gt: &Vector2<f64>, delta: f64) -> f64 {
    ((p_after - p_gt).norm_squared() - (p_before - p_gt).norm_squared() + delta).max(0.0)
}

/// `1/2 e^T H e + log(2 pi) - 1/2 log |H|` with `e = p_after - p_gt`.
pub fn gn_value(p_after: &Vector2<f64>, p_gt: &Vector2<f64>, h: &Matrix2<f64>) -> f64 {
    let e = p_after - p_gt;
    0.5 * (e.transpose() * h * e)[0] + (2.0 * PI).ln() - 0.5 * h.determinant().max(DET_FLOOR).ln()
}

/// Gradient-descent term from a sample `p_gd` far from the true location.
pub fn e_gd(
    f: &FeatureMap,
    fp: &FeatureMap,
    p: &Vector2<f64>,
    p_gd: &Vector2<f64>,
    p_gt: &Vector2<f64>,
    config: &LossConfig,
) -> Result<f64> {
    let sys = point_gn_system(f, fp, p, p_gd)?;
    Ok(gd_hinge(&(p_gd + sys.step(config.lambda_f)), p_gd, p_gt, config.gd_margin))
}

/// Gauss-Newton term from a sample `p_gn` close to the true location.
pub fn e_gn(
    f: &FeatureMap,
    fp: &FeatureMap,
    p: &Vector2<f64>,
    p_gn: &Vector2<f64>,
    p_gt: &Vector2<f64>,
    config: &LossConfig,
) -> Result<f64> {
    let sys = point_gn_system(f, fp, p, p_gn)?;
    Ok(gn_value(&(p_gn + sys.step(config.epsilon)), p_gt, &sys.h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(x, y)
    }

    fn textured(w: usize, h: usize, d: usize) -> FeatureMap {
        FeatureMap::from_fn(w, h, d, |c, r, ch| ((c as f64 * 0.7 + ch as f64).sin() + (r as f64 * 0.45 - ch as f64).cos()) * 0.5)
    }

    #[test]
    fn defaults_validate() {
        LossConfig::default().validate().unwrap();
        assert!(LossConfig { epsilon: 0.01, ..Default::default() }.validate().is_err());
        assert!(LossConfig { margin: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn pos_examples() {
        let f = textured(16, 16, 2);
        assert_eq!(e_pos(&f, &f, &v(5.5, 6.25), &v(5.5, 6.25)).unwrap(), 0.0);
        let a = FeatureMap::from_fn(8, 8, 2, |_, _, ch| (ch == 0) as u8 as f64);
        let b = FeatureMap::from_fn(8, 8, 2, |_, _, ch| (ch == 1) as u8 as f64);
        assert_eq!(e_pos(&a, &b, &v(3.0, 3.0), &v(4.2, 2.7)).unwrap(), 2.0);
    }

    #[test]
    fn pos_matches_direct_recomputation() {
        let f = textured(20, 20, 3);
        let fp = FeatureMap::from_fn(20, 20, 3, |c, r, ch| (c * r + ch) as f64 * 0.01);
        let (p, q) = (v(4.3, 9.9), v(12.6, 7.1));
        let a = f.sample_value(&p).unwrap();
        let b = fp.sample_value(&q).unwrap();
        let diff: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
        let direct: f64 = diff.iter().map(|d| d * d).sum();
        assert!((e_pos(&f, &fp, &p, &q).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn neg_examples() {
        let f = textured(16, 16, 2);
        assert_eq!(e_neg(&f, &f, &v(7.0, 7.0), &v(7.0, 7.0), 1.0).unwrap(), 1.0);
        let a = FeatureMap::from_fn(8, 8, 1, |_, _, _| 0.0);
        let far = FeatureMap::from_fn(8, 8, 1, |_, _, _| 2.0);
        assert_eq!(e_neg(&a, &far, &v(3.0, 3.0), &v(3.0, 3.0), 1.0).unwrap(), 0.0);
        let half = FeatureMap::from_fn(8, 8, 1, |_, _, _| 0.5);
        assert_eq!(e_neg(&a, &half, &v(3.0, 3.0), &v(4.0, 4.0), 1.0).unwrap(), 0.75);
    }

    #[test]
    fn out_of_bounds_is_an_error() {
        let f = textured(8, 8, 1);
        assert!(matches!(e_pos(&f, &f, &v(0.5, 3.0), &v(3.0, 3.0)), Err(Error::SampleOutOfBounds { .. })));
        assert!(point_gn_system(&f, &f, &v(3.0, 3.0), &v(3.0, 6.5)).is_err());
    }

    #[test]
    fn gn_system_examples() {
        let f = textured(12, 12, 2);
        let flat = FeatureMap::from_fn(12, 12, 2, |_, _, _| 0.4);
        let s = point_gn_system(&f, &flat, &v(5.0, 5.0), &v(6.3, 4.4)).unwrap();
        assert_eq!(s.h, Matrix2::zeros());
        assert_eq!(s.b, Vector2::zeros());
        assert!(s.j.iter().all(|j| *j == Vector2::zeros()));

        let lin = FeatureMap::from_fn(12, 12, 2, |c, r, ch| if ch == 0 { c as f64 } else { r as f64 });
        let s = point_gn_system(&f, &lin, &v(5.0, 5.0), &v(6.3, 4.4)).unwrap();
        assert_eq!(s.h, Matrix2::identity());
    }

    #[test]
    fn gn_system_matches_explicit_product() {
        let f = textured(24, 24, 4);
        let fp = FeatureMap::from_fn(24, 24, 4, |c, r, ch| ((c * 7 + r * 3 + ch * 5) % 11) as f64 * 0.1);
        let s = point_gn_system(&f, &fp, &v(10.2, 11.7), &v(13.4, 8.8)).unwrap();
        let j = nalgebra::DMatrix::from_fn(4, 2, |i, k| s.j[i][k]);
        let r = nalgebra::DVector::from_vec(s.r.clone());
        let h = j.transpose() * &j;
        let b = j.transpose() * r;
        for a in 0..2 {
            assert!((s.b[a] - b[a]).abs() < 1e-12);
            for c in 0..2 {
                assert!((s.h[(a, c)] - h[(a, c)]).abs() < 1e-12);
            }
        }
        assert_eq!(s.h, s.h.transpose());
        assert!(s.h.symmetric_eigenvalues().iter().all(|e| *e >= -1e-12));
    }

    #[test]
    fn heavy_damping_approaches_scaled_gradient() {
        let f = textured(24, 24, 3);
        let fp = FeatureMap::from_fn(24, 24, 3, |c, r, ch| ((c as f64 * 0.3 + ch as f64).cos() * r as f64) * 0.1);
        let s = point_gn_system(&f, &fp, &v(10.0, 11.0), &v(12.5, 9.25)).unwrap();
        let lambda = 1e6;
        let step = s.step(lambda);
        let expect = -s.b / lambda;
        assert!((step - expect).norm() <= 1e-4 * expect.norm());
    }

    #[test]
    fn gd_hinge_examples() {
        let gt = v(10.0, 10.0);
        let start = v(15.0, 10.0);
        // Lands on the solution.
        assert_eq!(gd_hinge(&gt, &start, &gt, 0.1), 0.0);
        // No movement: the distances cancel and only delta remains.
        assert_relative_eq!(gd_hinge(&start, &start, &gt, 0.1), 0.1, epsilon = 1e-15);
        // One pixel further away.
        assert_relative_eq!(gd_hinge(&v(16.0, 10.0), &start, &gt, 0.1), 11.1, epsilon = 1e-12);
    }

    #[test]
    fn gd_term_on_constructed_gradient_fields() {
        // F'(u, v) = s u with F(p) = c: the damped step along u is
        // -s (s u - c) / (s^2 + lambda_f).
        let cfg = LossConfig::default();
        let gt = v(10.0, 10.0);
        let start = v(15.0, 10.0);
        let p = v(4.0, 4.0);
        let s: f64 = 1.0;
        let f_at = |c: f64| FeatureMap::from_fn(32, 32, 1, move |_, _, _| c);
        let fp = FeatureMap::from_fn(32, 32, 1, |col, _, _| s * col as f64);

        // Step of exactly -5 px: s(15 s - c)/(s^2 + 2) = 5.
        let c_on = 15.0 * s - 5.0 * (s * s + cfg.lambda_f) / s;
        assert!(e_gd(&f_at(c_on), &fp, &p, &start, &gt, &cfg).unwrap().abs() < 1e-12);
        // Step of +1 px: away from the solution.
        let c_away = 15.0 * s + (s * s + cfg.lambda_f) / s;
        assert_relative_eq!(e_gd(&f_at(c_away), &fp, &p, &start, &gt, &cfg).unwrap(), 11.1, epsilon = 1e-9);
        // Zero gradient, zero step.
        let flat = FeatureMap::from_fn(32, 32, 1, |_, _, _| 0.3);
        assert_relative_eq!(e_gd(&f_at(0.0), &flat, &p, &start, &gt, &cfg).unwrap(), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn gn_value_examples() {
        let gt = v(3.0, 4.0);
        assert_relative_eq!(gn_value(&gt, &gt, &Matrix2::identity()), (2.0 * PI).ln(), epsilon = 1e-12);
        assert_relative_eq!(gn_value(&gt, &gt, &(Matrix2::identity() * 4.0)), (2.0 * PI).ln() - 0.5 * 16f64.ln(), epsilon = 1e-12);
        assert!((gn_value(&gt, &gt, &(Matrix2::identity() * 4.0)) - 0.4516).abs() < 1e-4);
        let e = v(0.3, -0.2);
        assert_relative_eq!(gn_value(&(gt + e), &gt, &Matrix2::identity()), 0.5 * e.norm_squared() + (2.0 * PI).ln(), epsilon = 1e-12);
        // Singular H hits the floor instead of diverging.
        assert!(gn_value(&gt, &gt, &Matrix2::zeros()).is_finite());
    }

    #[test]
    fn gn_term_at_truth_with_identical_maps() {
        let f = textured(24, 24, 2);
        let cfg = LossConfig::default();
        let p = v(9.0, 12.0);
        let sys = point_gn_system(&f, &f, &p, &p).unwrap();
        assert!(sys.b.norm() == 0.0);
        let expect = (2.0 * PI).ln() - 0.5 * sys.h.determinant().max(DET_FLOOR).ln();
        assert_relative_eq!(e_gn(&f, &f, &p, &p, &p, &cfg).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn terms_are_invariant_to_channel_permutation() {
        let f = textured(20, 20, 3);
        let fp = FeatureMap::from_fn(20, 20, 3, |c, r, ch| ((c + 2 * r) as f64 * 0.2 + ch as f64).sin());
        let perm = |m: &FeatureMap| FeatureMap::from_fn(20, 20, 3, |c, r, ch| m.get(c, r, [2, 0, 1][ch]));
        let (pf, pfp) = (perm(&f), perm(&fp));
        let cfg = LossConfig::default();
        let (p, gt, gd, gn) = (v(5.0, 6.0), v(9.3, 8.1), v(13.1, 10.9), v(9.8, 7.6));
        let all = |a: &FeatureMap, b: &FeatureMap| {
            [
                e_pos(a, b, &p, &gt).unwrap(),
                e_neg(a, b, &p, &gd, 1.0).unwrap(),
                e_gd(a, b, &p, &gd, &gt, &cfg).unwrap(),
                e_gn(a, b, &p, &gn, &gt, &cfg).unwrap(),
            ]
        };
        let (x, y) = (all(&f, &fp), all(&pf, &pfp));
        for k in 0..4 {
            assert_relative_eq!(x[k], y[k], epsilon = 1e-12);
        }
    }
}
