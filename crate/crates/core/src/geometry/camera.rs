//! Pinhole camera model and the reference-to-target pixel warp.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::se3::SE3Pose;
use crate::error::{Error, Result};

/// Points closer than this to the camera plane are treated as behind it.
pub const Z_MIN: f64 = 1e-6;

/// Number of pyramid levels; level 4 is full resolution.
pub const NUM_LEVELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidIntrinsics("non-finite principal point".into()));
        }
        if width < 8 || height < 8 {
            return Err(Error::InvalidIntrinsics(format!("image {width}x{height} is smaller than 8x8")));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy, width, height })
    }

    /// Intrinsics for pyramid level `level` (1 = coarsest, 4 = full resolution).
    ///
    /// Focal lengths and principal point scale by `2^(level - 4)`; image size
    /// is divided by `2^(4 - level)`.
    pub fn at_level(&self, level: usize) -> CameraIntrinsics {
        assert!((1..=NUM_LEVELS).contains(&level), "pyramid level {level} out of range");
        let shift = NUM_LEVELS - level;
        let s = level_scale(level);
        CameraIntrinsics {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: self.cx * s,
            cy: self.cy * s,
            width: self.width >> shift,
            height: self.height >> shift,
        }
    }

    /// True when `q` lies in `[1, w-2] x [1, h-2]`, the bilinear sampling domain.
    pub fn in_bounds(&self, q: &Vector2<f64>) -> bool {
        in_interp_domain(q, self.width, self.height)
    }
}

/// Coordinate scale from level 4 to `level`.
pub fn level_scale(level: usize) -> f64 {
    1.0 / (1u32 << (NUM_LEVELS - level)) as f64
}

pub fn in_interp_domain(q: &Vector2<f64>, width: usize, height: usize) -> bool {
    q.x >= 1.0 && q.y >= 1.0 && q.x <= width as f64 - 2.0 && q.y <= height as f64 - 2.0
}

pub fn unproject(pixel: &Vector2<f64>, depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::InvalidDepth(depth));
    }
    Ok(Vector3::new(depth * (pixel.x - k.cx) / k.fx, depth * (pixel.y - k.cy) / k.fy, depth))
}

/// Pinhole projection. Does not check image bounds.
pub fn project(point: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Vector2<f64>> {
    if !(point.z > Z_MIN) {
        return Err(Error::BehindCamera(point.z));
    }
    Ok(Vector2::new(k.fx * point.x / point.z + k.cx, k.fy * point.y / point.z + k.cy))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Warped {
    pub pixel: Vector2<f64>,
    /// The transformed 3-D point in the target camera frame.
    pub point: Vector3<f64>,
    pub valid: bool,
}

/// `p' = project(R unproject(p, d) + t)`, flagged invalid when behind the
/// target camera or outside the target's interpolation domain.
pub fn warp_point(p: &Vector2<f64>, depth: f64, pose: &SE3Pose, k_ref: &CameraIntrinsics, k_target: &CameraIntrinsics) -> Result<Warped> {
    let x = pose.transform_point(&unproject(p, depth, k_ref)?);
    match project(&x, k_target) {
        Ok(q) => Ok(Warped { pixel: q, point: x, valid: k_target.in_bounds(&q) }),
        Err(Error::BehindCamera(_)) => Ok(Warped { pixel: Vector2::new(f64::NAN, f64::NAN), point: x, valid: false }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::se3::{se3_exp, Twist};

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn unproject_principal_point() {
        let k = k100();
        assert_eq!(unproject(&Vector2::new(50.0, 50.0), 1.0, &k).unwrap(), Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn unproject_hand_value() {
        let k = k100();
        assert_eq!(unproject(&Vector2::new(150.0, 50.0), 2.0, &k).unwrap(), Vector3::new(2.0, 0.0, 2.0));
    }

    #[test]
    fn unproject_rejects_bad_depth() {
        let k = k100();
        assert!(matches!(unproject(&Vector2::new(1.0, 1.0), 0.0, &k), Err(Error::InvalidDepth(_))));
        assert!(matches!(unproject(&Vector2::new(1.0, 1.0), -2.0, &k), Err(Error::InvalidDepth(_))));
    }

    #[test]
    fn project_hand_values() {
        let k = CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0, 100, 100).unwrap();
        assert_eq!(project(&Vector3::new(1.0, 1.0, 2.0), &k).unwrap(), Vector2::new(50.0, 50.0));
        assert_eq!(project(&Vector3::new(0.0, 0.0, 1.0), &k100()).unwrap(), Vector2::new(50.0, 50.0));
        assert!(matches!(project(&Vector3::new(1.0, 1.0, 0.0), &k), Err(Error::BehindCamera(_))));
    }

    #[test]
    fn warp_identity_and_axial_motion() {
        let k = k100();
        let p = Vector2::new(31.25, 70.5);
        let w = warp_point(&p, 3.0, &SE3Pose::identity(), &k, &k).unwrap();
        assert!(w.valid);
        assert_eq!(w.pixel, p);

        let pose = SE3Pose::from_translation(Vector3::new(0.0, 0.0, -0.5));
        let w = warp_point(&Vector2::new(50.0, 50.0), 1.0, &pose, &k, &k).unwrap();
        assert!(w.valid);
        assert_eq!(w.pixel, Vector2::new(50.0, 50.0));
    }

    #[test]
    fn warp_behind_camera_is_invalid() {
        let k = k100();
        let pose = SE3Pose::from_translation(Vector3::new(0.0, 0.0, -2.0));
        let w = warp_point(&Vector2::new(50.0, 50.0), 1.0, &pose, &k, &k).unwrap();
        assert!(!w.valid);
    }

    #[test]
    fn warp_matches_homogeneous_matrix_oracle() {
        // Oracle: p' ~ K [R | t] [d K^-1 (u, v, 1); 1] with explicit 3x3/3x4 matrices.
        use nalgebra::{Matrix3, Matrix3x4, Vector4};
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let k = CameraIntrinsics::new(120.0, 110.0, 63.5, 47.5, 128, 96).unwrap();
        let km = Matrix3::new(k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0);
        let kinv = km.try_inverse().unwrap();
        for _ in 0..200 {
            let xi: [f64; 6] = std::array::from_fn(|i| rng.random_range(-1.0..1.0) * if i < 3 { 0.3 } else { 0.1 });
            let pose = se3_exp(&Twist::from_slice(&xi));
            let p = Vector2::new(rng.random_range(0.0..128.0), rng.random_range(0.0..96.0));
            let d = rng.random_range(1.0..10.0);
            let ray = kinv * Vector3::new(p.x, p.y, 1.0) * d;
            let m: Matrix3x4<f64> = km * pose.to_matrix3x4();
            let h = m * Vector4::new(ray.x, ray.y, ray.z, 1.0);
            if h.z <= Z_MIN {
                continue;
            }
            let expected = Vector2::new(h.x / h.z, h.y / h.z);
            let w = warp_point(&p, d, &pose, &k, &k).unwrap();
            assert!((w.pixel - expected).amax() < 1e-9, "{} vs {}", w.pixel, expected);
        }
    }

    #[test]
    fn level_scaling_contract() {
        let k = CameraIntrinsics::new(160.0, 150.0, 80.0, 64.0, 160, 128).unwrap();
        for level in 1..=4 {
            let kl = k.at_level(level);
            let s = 2f64.powi(level as i32 - 4);
            assert_eq!(kl.fx, 160.0 * s);
            assert_eq!(kl.width, 160 >> (4 - level));
        }
    }
}
