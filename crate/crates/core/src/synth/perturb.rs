//! Pose sampling by induced flow, photometric corruption, and sparse point
//! selection.

use nalgebra::{Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::SyntheticScene;
use crate::align::SparsePoint;
use crate::error::{Error, Result};
use crate::features::pyramid::central_gradient;
use crate::features::FeatureMap;
use crate::geometry::{project, se3_exp, unproject, CameraIntrinsics, SE3Pose, Twist};

/// Bracket on the mean full-resolution flow a perturbation induces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MagnitudeClass {
    Zero,
    Small,
    Medium,
    Large,
}

impl MagnitudeClass {
    /// `(min, max]` mean flow in pixels (`Zero` is exactly 0).
    pub fn flow_bracket(self) -> (f64, f64) {
        match self {
            MagnitudeClass::Zero => (0.0, 0.0),
            MagnitudeClass::Small => (0.5, 2.0),
            MagnitudeClass::Medium => (2.0, 8.0),
            MagnitudeClass::Large => (16.0, 24.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MagnitudeClass::Zero => "zero",
            MagnitudeClass::Small => "small",
            MagnitudeClass::Medium => "medium",
            MagnitudeClass::Large => "large",
        }
    }
}

impl std::str::FromStr for MagnitudeClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(MagnitudeClass::Zero),
            "small" => Ok(MagnitudeClass::Small),
            "medium" => Ok(MagnitudeClass::Medium),
            "large" => Ok(MagnitudeClass::Large),
            other => Err(Error::Config(format!("unknown magnitude class {other:?}"))),
        }
    }
}

/// Reference pixels with depth on which induced flow is measured.
#[derive(Clone, Debug)]
pub struct FlowProbe {
    pub pixels: Vec<Vector2<f64>>,
    pub points: Vec<Vector3<f64>>,
    pub intrinsics: CameraIntrinsics,
}

impl FlowProbe {
    /// Every `stride`-th pixel of the scene in both directions.
    pub fn from_scene(scene: &SyntheticScene, stride: usize) -> Self {
        let k = scene.intrinsics;
        let mut pixels = Vec::new();
        let mut points = Vec::new();
        for r in (stride / 2..k.height).step_by(stride) {
            for c in (stride / 2..k.width).step_by(stride) {
                let p = Vector2::new(c as f64, r as f64);
                pixels.push(p);
                points.push(unproject(&p, scene.depth_at(c, r), &k).expect("scene depths are positive"));
            }
        }
        FlowProbe { pixels, points, intrinsics: k }
    }

    pub fn from_points(points: &[SparsePoint], k: &CameraIntrinsics) -> Result<Self> {
        Ok(FlowProbe {
            pixels: points.iter().map(|p| p.pixel).collect(),
            points: points.iter().map(|p| unproject(&p.pixel, p.depth, k)).collect::<Result<_>>()?,
            intrinsics: *k,
        })
    }

    /// The probe as seen after moving its points by `pose`; points that end
    /// up behind the camera are dropped.
    pub fn transformed(&self, pose: &SE3Pose) -> Result<FlowProbe> {
        let mut out = FlowProbe { pixels: Vec::new(), points: Vec::new(), intrinsics: self.intrinsics };
        for x in &self.points {
            let y = pose.transform_point(x);
            if let Ok(q) = project(&y, &self.intrinsics) {
                out.pixels.push(q);
                out.points.push(y);
            }
        }
        if out.points.is_empty() {
            return Err(Error::EmptyInput("flow probe"));
        }
        Ok(out)
    }

    /// Mean `|p' - p|`; points behind the camera count as infinite flow.
    pub fn mean_flow(&self, pose: &SE3Pose) -> f64 {
        let total: f64 = self
            .pixels
            .iter()
            .zip(&self.points)
            .map(|(p, x)| match project(&pose.transform_point(x), &self.intrinsics) {
                Ok(q) => (q - p).norm(),
                Err(_) => f64::INFINITY,
            })
            .sum();
        total / self.pixels.len() as f64
    }
}

/// Half-widths of the twist box directions are drawn from, before scaling:
/// translation relative to scene depth, rotation in radians.
const TRANSLATION_BOX: f64 = 0.05;
const ROTATION_BOX: f64 = 0.02;

/// Samples a pose whose mean induced flow on `probe` lies in the class
/// bracket. The zero class is the identity.
pub fn sample_pose_perturbation(rng: &mut impl Rng, class: MagnitudeClass, probe: &FlowProbe) -> SE3Pose {
    if class == MagnitudeClass::Zero {
        return SE3Pose::identity();
    }
    let (lo, hi) = class.flow_bracket();
    sample_pose_with_flow(rng, lo, hi, probe)
}

/// Samples a pose whose mean induced flow on `probe` lies in `(lo, hi]`.
///
/// A direction is drawn uniformly from a twist box and a target flow
/// uniformly from the bracket; the twist is then scaled by bisection until
/// it induces that flow. Draws that miss the bracket are resampled.
pub fn sample_pose_with_flow(rng: &mut impl Rng, lo: f64, hi: f64, probe: &FlowProbe) -> SE3Pose {
    assert!(0.0 <= lo && lo < hi, "empty flow bracket ({lo}, {hi}]");
    let mean_depth = probe.points.iter().map(|x| x.z).sum::<f64>() / probe.points.len() as f64;
    loop {
        let dir: [f64; 6] = std::array::from_fn(|i| {
            let half = if i < 3 { TRANSLATION_BOX * mean_depth } else { ROTATION_BOX };
            rng.random_range(-half..=half)
        });
        let dir = Twist::from_slice(&dir);
        let goal = rng.random_range(lo..hi);
        let flow_at = |s: f64| probe.mean_flow(&se3_exp(&dir.scaled(s)));

        let mut s_hi = 1.0;
        while flow_at(s_hi) < goal && s_hi < 1e3 {
            s_hi *= 2.0;
        }
        let mut s_lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (s_lo + s_hi);
            if flow_at(mid) < goal {
                s_lo = mid;
            } else {
                s_hi = mid;
            }
        }
        let pose = se3_exp(&dir.scaled(0.5 * (s_lo + s_hi)));
        let flow = probe.mean_flow(&pose);
        if flow > lo && flow <= hi {
            return pose;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotometricParams {
    pub gain: f64,
    pub bias: f64,
    pub noise_sigma: f64,
    pub gamma: f64,
}

impl Default for PhotometricParams {
    fn default() -> Self {
        PhotometricParams { gain: 1.0, bias: 0.0, noise_sigma: 0.0, gamma: 1.0 }
    }
}

impl PhotometricParams {
    pub fn is_identity(&self) -> bool {
        *self == PhotometricParams::default()
    }
}

/// `gain * I^gamma + bias + N(0, sigma^2)`, deterministic in `seed`.
pub fn photometric_perturb(image: &FeatureMap, params: &PhotometricParams, seed: u64) -> Result<FeatureMap> {
    let p = params;
    if ![p.gain, p.bias, p.noise_sigma, p.gamma].iter().all(|x| x.is_finite()) || p.noise_sigma < 0.0 || p.gamma <= 0.0 {
        return Err(Error::Config(format!("invalid photometric parameters {p:?}")));
    }
    if p.is_identity() {
        return Ok(image.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, p.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut out = image.clone();
    for x in out.data_mut() {
        let mut v = if p.gamma == 1.0 { *x } else { x.max(0.0).powf(p.gamma) };
        v = p.gain * v + p.bias;
        if p.noise_sigma > 0.0 {
            v += normal.sample(&mut rng);
        }
        *x = v;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointSelection {
    pub points: Vec<SparsePoint>,
    /// Set when fewer than the requested number of points qualified.
    pub warning: Option<String>,
}

/// Picks up to `n` distinct pixels whose gradient magnitude exceeds the
/// image median, uniformly among the qualifying pixels.
///
/// Only pixels at least `margin` from the left/top and `2 * margin` from the
/// right/bottom border are considered (with `margin = 8` they stay inside the
/// interpolation domain at every pyramid level). `mask`, if given, further
/// restricts candidates. Depth comes from `depth`.
pub fn select_sparse_points(
    image: &FeatureMap,
    depth: &FeatureMap,
    n: usize,
    rng: &mut impl Rng,
    mask: Option<&[bool]>,
    margin: usize,
) -> Result<PointSelection> {
    let (w, h) = (image.width(), image.height());
    if n * 10 > w * h {
        return Err(Error::Config(format!("{n} points exceed 10% of a {w}x{h} image")));
    }
    if depth.width() != w || depth.height() != h {
        return Err(Error::DimensionMismatch("depth map differs in size from image".into()));
    }
    let grad: Vec<f64> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (c, r)))
        .map(|(c, r)| {
            let (gu, gv) = central_gradient(image, c, r, 0);
            (gu * gu + gv * gv).sqrt()
        })
        .collect();
    let mut sorted = grad.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let threshold = sorted[sorted.len() / 2];

    let mut candidates = Vec::new();
    for r in margin..h.saturating_sub(2 * margin) {
        for c in margin..w.saturating_sub(2 * margin) {
            let i = r * w + c;
            if grad[i] > threshold && mask.is_none_or(|m| m[i]) {
                candidates.push((c, r));
            }
        }
    }
    candidates.shuffle(rng);
    candidates.truncate(n);
    candidates.sort_by_key(|&(c, r)| (r, c));
    let points: Vec<SparsePoint> = candidates.iter().map(|&(c, r)| SparsePoint::new(c as f64, r as f64, depth.get(c, r, 0))).collect();
    let warning = (points.len() < n).then(|| format!("only {} of {n} requested points have sufficient gradient", points.len()));
    if let Some(msg) = &warning {
        log::warn!("{msg}");
    }
    Ok(PointSelection { points, warning })
}
