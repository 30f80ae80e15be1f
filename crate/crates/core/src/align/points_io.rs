//! Text format for sparse point sets.
//!
//! ```text
//! # comment
//! intrinsics fx fy cx cy width height
//! u v depth
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::residual::SparsePoint;
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;

pub fn format_points(points: &[SparsePoint], k: &CameraIntrinsics) -> String {
    let mut out = String::new();
    writeln!(out, "intrinsics {:.17e} {:.17e} {:.17e} {:.17e} {} {}", k.fx, k.fy, k.cx, k.cy, k.width, k.height).unwrap();
    for p in points {
        writeln!(out, "{:.17e} {:.17e} {:.17e}", p.pixel.x, p.pixel.y, p.depth).unwrap();
    }
    out
}

pub fn parse_points(text: &str) -> Result<(Vec<SparsePoint>, CameraIntrinsics)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim())).filter(|(_, l)| !l.is_empty());
    let (n, header) = lines.next().ok_or(Error::EmptyInput("points file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 7 || fields[0] != "intrinsics" {
        return Err(Error::Format(format!("line {n}: expected `intrinsics fx fy cx cy width height`")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("line {n}: {s:?}: {e}")));
    let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(format!("line {n}: {s:?}: {e}")));
    let k = CameraIntrinsics::new(num(fields[1])?, num(fields[2])?, num(fields[3])?, num(fields[4])?, int(fields[5])?, int(fields[6])?)?;
    let mut points = Vec::new();
    for (n, line) in lines {
        let vals = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("line {n}: {s:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != 3 {
            return Err(Error::Format(format!("line {n}: expected `u v depth`, got {} fields", vals.len())));
        }
        if !(vals[2].is_finite() && vals[2] > 0.0) {
            return Err(Error::InvalidDepth(vals[2]));
        }
        points.push(SparsePoint::new(vals[0], vals[1], vals[2]));
    }
    Ok((points, k))
}

pub fn write_points_file(path: impl AsRef<Path>, points: &[SparsePoint], k: &CameraIntrinsics) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_points(points, k)).map_err(|e| Error::io(path, e))
}

pub fn read_points_file(path: impl AsRef<Path>) -> Result<(Vec<SparsePoint>, CameraIntrinsics)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points(&text)
}
