use nalgebra::{Matrix3, Vector3};

/// `|t_est - t_gt|_2`.
pub fn translation_error(t_est: &Vector3<f64>, t_gt: &Vector3<f64>) -> f64 {
    (t_est - t_gt).norm()
}

/// Geodesic angle between two rotations in degrees, in `[0, 180]`.
pub fn rotation_error(r_est: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> f64 {
    // R_est^-1 = R_est^T for orthonormal input.
    let trace = (r_est.transpose() * r_gt).trace();
    rotation_error_from_trace(trace)
}

pub(crate) fn rotation_error_from_trace(trace: f64) -> f64 {
    ((trace - 1.0) * 0.5).clamp(-1.0, 1.0).acos().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::se3::rotation_about;

    #[test]
    fn translation_error_values() {
        let z = Vector3::zeros();
        assert_eq!(translation_error(&z, &z), 0.0);
        assert_eq!(translation_error(&Vector3::new(1.0, 0.0, 0.0), &z), 1.0);
        assert_eq!(translation_error(&Vector3::new(1.0, 2.0, 2.0), &z), 3.0);
    }

    #[test]
    fn rotation_error_of_known_angles() {
        let axis = Vector3::new(0.2, -0.7, 0.4);
        for deg in [1.0f64, 30.0, 179.0] {
            let r = rotation_about(&axis, deg.to_radians());
            let e = rotation_error(&r, &Matrix3::identity());
            assert!((e - deg).abs() < 1e-9, "{deg}: {e}");
        }
        let r = rotation_about(&axis, 0.3);
        assert_eq!(rotation_error(&r, &r), 0.0);
    }

    #[test]
    fn clamped_trace_overshoot() {
        let e = rotation_error_from_trace(3.0 + 5e-16 * 2.0);
        assert_eq!(e, 0.0);
        assert!(!rotation_error_from_trace(-1.0 - 1e-15).is_nan());
    }
}
