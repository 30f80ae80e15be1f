//! Rigid transforms and their exponential coordinates.
//!
//! Twists are ordered `(v, w)`: three translational components followed by
//! three rotational components (radians).
//!
//! **Updates compose on the left.** `boxplus(delta, pose)` is
//! `exp(delta) * pose`, so the increment is expressed in the frame the pose
//! maps *into* (the target camera frame for a reference-to-target pose).

use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this rotation angle the exponential and logarithm use Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// `log` refuses rotations closer than this to a half turn.
pub const LOG_PI_GUARD: f64 = 1e-6;

/// Element of se(3): `(v1, v2, v3, w1, w2, w3)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn zero() -> Self {
        Twist(Vector6::zeros())
    }

    pub fn new(v: Vector3<f64>, w: Vector3<f64>) -> Self {
        Twist(Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z))
    }

    pub fn from_slice(values: &[f64; 6]) -> Self {
        Twist(Vector6::from_column_slice(values))
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Twist(self.0 * s)
    }
}

impl std::ops::Add for Twist {
    type Output = Twist;
    fn add(self, rhs: Twist) -> Twist {
        Twist(self.0 + rhs.0)
    }
}

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rigid transform `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SE3Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for SE3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl SE3Pose {
    /// Tolerance on `|R^T R - I|_max` and `|det R - 1|` for a pose to count as valid.
    pub const ORTHONORMAL_TOL: f64 = 1e-9;

    pub fn identity() -> Self {
        SE3Pose { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Builds a pose, rejecting rotations that are not orthonormal within `tol`.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>, tol: f64) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|x| x.is_finite()) {
            return Err(Error::InvalidPose("non-finite entries".into()));
        }
        let err = orthonormality_error(&rotation);
        if err > tol {
            return Err(Error::InvalidPose(format!("rotation is not orthonormal (error {err:.3e} > {tol:.1e})")));
        }
        Ok(SE3Pose { rotation, translation })
    }

    /// Builds a pose without validation. The caller guarantees orthonormality.
    pub fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        SE3Pose { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        SE3Pose { rotation: Matrix3::identity(), translation: t }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        SE3Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &SE3Pose) -> Self {
        SE3Pose { rotation: self.rotation * other.rotation, translation: self.rotation * other.translation + self.translation }
    }

    pub fn exp(delta: &Twist) -> Self {
        se3_exp(delta)
    }

    pub fn log(&self) -> Result<Twist> {
        se3_log(self)
    }

    /// Row-major `[R | t]`.
    pub fn to_matrix3x4(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Projects the rotation back onto SO(3) via SVD.
    pub fn orthonormalized(&self) -> Self {
        let svd = self.rotation.svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        SE3Pose { rotation: r, translation: self.translation }
    }

    pub fn is_valid(&self) -> bool {
        orthonormality_error(&self.rotation) <= Self::ORTHONORMAL_TOL
    }
}

impl Mul for SE3Pose {
    type Output = SE3Pose;
    fn mul(self, rhs: SE3Pose) -> SE3Pose {
        self.compose(&rhs)
    }
}

impl fmt::Display for SE3Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::geometry::pose_io::format_pose(self))
    }
}

/// Max of `|R^T R - I|_max` and `|det R - 1|`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let ortho = gram.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    ortho.max((r.determinant() - 1.0).abs())
}

// (1 - cos t) / t^2, computed without cancellation.
fn coef_b(theta: f64) -> f64 {
    let s = (0.5 * theta).sin();
    2.0 * s * s / (theta * theta)
}

// (t - sin t) / t^3
fn coef_c(theta: f64) -> f64 {
    if theta < 1e-3 {
        let t2 = theta * theta;
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (theta - theta.sin()) / (theta * theta * theta)
    }
}

/// Rodrigues rotation and its left Jacobian `V` for a rotation vector.
fn so3_exp_with_v(w: &Vector3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let theta = w.norm();
    let wx = hat(w);
    let wx2 = wx * wx;
    let eye = Matrix3::identity();
    if theta < SMALL_ANGLE {
        (eye + wx + 0.5 * wx2, eye + 0.5 * wx + wx2 / 6.0)
    } else {
        let a = theta.sin() / theta;
        let b = coef_b(theta);
        let c = coef_c(theta);
        (eye + a * wx + b * wx2, eye + b * wx + c * wx2)
    }
}

pub fn se3_exp(delta: &Twist) -> SE3Pose {
    let (r, v) = so3_exp_with_v(&delta.rotation());
    SE3Pose { rotation: r, translation: v * delta.translation() }
}

fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let skew = 0.5 * vee(&(r - r.transpose()));
    let sin_t = skew.norm();
    let cos_t = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_t.atan2(cos_t);

    if theta < SMALL_ANGLE {
        return Ok(skew * (1.0 + theta * theta / 6.0));
    }
    if theta < PI - 1e-3 {
        return Ok(skew * (theta / sin_t));
    }
    if theta > PI - LOG_PI_GUARD {
        return Err(Error::NearSingularRotation(theta));
    }

    // Near a half turn the skew part carries almost no signal; recover the
    // axis from the symmetric part (1 - cos t) a a^T instead.
    let sym = 0.5 * (r + r.transpose()) - Matrix3::identity() * cos_t;
    let one_minus_cos = 1.0 - cos_t;
    let k = (0..3).max_by(|&i, &j| sym[(i, i)].partial_cmp(&sym[(j, j)]).unwrap()).unwrap();
    let ak = (sym[(k, k)] / one_minus_cos).max(0.0).sqrt();
    let mut axis: Vector3<f64> = sym.column(k) / (one_minus_cos * ak);
    axis /= axis.norm();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Inverse of `se3_exp` for rotation angles below `pi - 1e-6`.
pub fn se3_log(pose: &SE3Pose) -> Result<Twist> {
    let w = so3_log(&pose.rotation)?;
    let theta = w.norm();
    let wx = hat(&w);
    let d = if theta < 1e-3 {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0
    } else {
        let a = theta.sin() / theta;
        let b = coef_b(theta);
        (1.0 - a / (2.0 * b)) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - 0.5 * wx + d * (wx * wx);
    Ok(Twist::new(v_inv * pose.translation, w))
}

/// `delta ⊞ pose = exp(delta) * pose` (left composition).
pub fn boxplus(delta: &Twist, pose: &SE3Pose) -> SE3Pose {
    se3_exp(delta).compose(pose)
}

/// Rotation about a unit axis by `angle` radians.
pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    so3_exp_with_v(&(axis.normalize() * angle)).0
}
