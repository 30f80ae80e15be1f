//! Text format for poses: twelve whitespace-separated decimals, the row-major
//! 3x4 matrix `[R | t]`.

use nalgebra::{Matrix3, Vector3};

use super::se3::{orthonormality_error, SE3Pose};
use crate::error::{Error, Result};

/// Rotations further than this from SO(3) are rejected by the parser.
pub const PARSE_ORTHONORMAL_TOL: f64 = 1e-6;

/// 17 significant digits per entry, enough to round-trip any `f64`.
pub fn format_pose(pose: &SE3Pose) -> String {
    let m = pose.to_matrix3x4();
    let mut out = String::with_capacity(12 * 25);
    for r in 0..3 {
        for c in 0..4 {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&format!("{:.16e}", m[(r, c)]));
        }
    }
    out
}

pub fn parse_pose(text: &str) -> Result<SE3Pose> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|e| Error::InvalidPose(format!("bad number {tok:?}: {e}"))))
        .collect::<Result<_>>()?;
    if values.len() != 12 {
        return Err(Error::InvalidPose(format!("expected 12 numbers, found {}", values.len())));
    }
    let r = Matrix3::new(values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9], values[10]);
    let t = Vector3::new(values[3], values[7], values[11]);
    let pose = SE3Pose::from_parts(r, t, PARSE_ORTHONORMAL_TOL)?;
    // Accepted but outside the strict invariant: snap back onto SO(3).
    if orthonormality_error(&r) > SE3Pose::ORTHONORMAL_TOL {
        return Ok(pose.orthonormalized());
    }
    Ok(pose)
}

pub fn read_pose_file(path: &std::path::Path) -> Result<SE3Pose> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose(&text)
}

pub fn write_pose_file(path: &std::path::Path, pose: &SE3Pose) -> Result<()> {
    std::fs::write(path, format_pose(pose) + "\n").map_err(|e| Error::io(path, e))
}


/// Serde adapter storing a pose as its 12-number text form.
pub mod serde_pose {
    use super::*;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(pose: &SE3Pose, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_pose(pose))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<SE3Pose, D::Error> {
        let text = String::deserialize(d)?;
        parse_pose(&text).map_err(serde::de::Error::custom)
    }
}
