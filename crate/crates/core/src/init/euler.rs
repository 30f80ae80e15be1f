//! Euler-angle pose parameterization and the pose regression loss.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{rotation_about, SE3Pose};

/// Default weight of the angle term in [`posenet_loss`].
pub const POSENET_LAMBDA: f64 = 10.0;

/// Rotation as intrinsic X, then Y, then Z angles, `R = Rx(a) Ry(b) Rz(c)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerPose {
    /// Radians, each wrapped to `(-pi, pi]`.
    pub r_euler: Vector3<f64>,
    pub t: Vector3<f64>,
}

fn wrap(a: f64) -> f64 {
    let w = a.rem_euclid(std::f64::consts::TAU);
    if w > std::f64::consts::PI {
        w - std::f64::consts::TAU
    } else {
        w
    }
}

impl EulerPose {
    pub fn new(r_euler: Vector3<f64>, t: Vector3<f64>) -> Self {
        EulerPose { r_euler: r_euler.map(wrap), t }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_about(&Vector3::x(), self.r_euler.x)
            * rotation_about(&Vector3::y(), self.r_euler.y)
            * rotation_about(&Vector3::z(), self.r_euler.z)
    }

    pub fn to_pose(&self) -> SE3Pose {
        SE3Pose::from_parts_unchecked(self.rotation_matrix(), self.t)
    }

    /// At gimbal lock (`|b| = pi/2`) the X angle is set to zero.
    pub fn from_pose(pose: &SE3Pose) -> Self {
        let r = pose.rotation();
        let sb = r[(0, 2)].clamp(-1.0, 1.0);
        let b = sb.asin();
        let (a, c) = if sb.abs() < 1.0 - 1e-12 {
            ((-r[(1, 2)]).atan2(r[(2, 2)]), (-r[(0, 1)]).atan2(r[(0, 0)]))
        } else {
            (0.0, r[(1, 0)].atan2(r[(1, 1)]))
        };
        EulerPose::new(Vector3::new(a, b, c), *pose.translation())
    }
}

/// `|t - t_gt| + lambda |r - r_gt|`, with angles compared component-wise.
pub fn posenet_loss(est: &EulerPose, gt: &EulerPose, lambda: f64) -> f64 {
    (est.t - gt.t).norm() + lambda * (est.r_euler - gt.r_euler).norm()
}
