//! Exact two-view synthesis.
//!
//! The scene texture is taken to be what the *target* camera sees. The
//! reference view is synthesized by inverse sampling: each reference pixel
//! `p` with depth `d` is warped to `p'` and takes the bilinear value of the
//! target at `p'`. Bilinear sampling of the target at the warped location
//! therefore reproduces the reference value exactly, which is what makes
//! the generator usable as a ground-truth oracle for the solver.

use nalgebra::Vector2;

use super::scene::SyntheticScene;
use crate::error::{Error, Result};
use crate::features::{FeatureMap, FeaturePyramid};
use crate::geometry::{level_scale, warp_point, CameraIntrinsics, SE3Pose, NUM_LEVELS};

/// Relative depth slack before a z-buffer hit counts as occluded.
pub const OCCLUSION_TOL: f64 = 0.01;

/// Minimum fraction of reference pixels that must remain visible.
pub const MIN_OVERLAP: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct WarpedPair {
    pub reference: FeatureMap,
    pub target: FeatureMap,
    /// Per reference pixel: visible in the target and not occluded.
    pub mask: Vec<bool>,
    /// Per reference pixel, its target location (NaN where invalid).
    pub correspondences: Vec<Vector2<f64>>,
    pub overlap: f64,
}

impl WarpedPair {
    pub fn correspondence(&self, col: usize, row: usize) -> Option<Vector2<f64>> {
        let i = row * self.reference.width() + col;
        self.mask[i].then(|| self.correspondences[i])
    }
}

/// Forward-maps every pixel of a depth map through `pose`; returns target
/// locations, in-view flags, and a z-buffer based visibility mask.
fn forward_map(depth: &FeatureMap, pose: &SE3Pose, k: &CameraIntrinsics) -> Result<(Vec<Vector2<f64>>, Vec<bool>)> {
    let (w, h) = (depth.width(), depth.height());
    let mut locs = Vec::with_capacity(w * h);
    let mut zs = Vec::with_capacity(w * h);
    let mut in_view = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let p = Vector2::new(c as f64, r as f64);
            let wp = warp_point(&p, depth.get(c, r, 0), pose, k, k)?;
            locs.push(wp.pixel);
            zs.push(wp.point.z);
            in_view.push(wp.valid);
        }
    }
    let mut zbuf = vec![f64::INFINITY; w * h];
    for i in 0..w * h {
        if in_view[i] {
            let (c, r) = (locs[i].x.round() as usize, locs[i].y.round() as usize);
            let cell = &mut zbuf[r * w + c];
            *cell = cell.min(zs[i]);
        }
    }
    let mask = (0..w * h)
        .map(|i| {
            in_view[i] && {
                let (c, r) = (locs[i].x.round() as usize, locs[i].y.round() as usize);
                zs[i] <= zbuf[r * w + c] * (1.0 + OCCLUSION_TOL)
            }
        })
        .collect();
    Ok((locs, mask))
}

/// Builds the exact reference/target pair for `pose` (reference to target).
pub fn warp_scene(scene: &SyntheticScene, pose: &SE3Pose) -> Result<WarpedPair> {
    let k = scene.intrinsics;
    let (w, h) = (k.width, k.height);
    let (locs, mask) = forward_map(&scene.depth, pose, &k)?;
    let target = scene.texture.clone();
    let mut data = Vec::with_capacity(w * h);
    let mut value = [0.0];
    for (i, q) in locs.iter().enumerate() {
        let v = if target.sample_into(q.x, q.y, &mut value, None, None) {
            value[0]
        } else {
            // Outside the target: any plausible value will do, it is masked.
            let (c, r) = (i % w, i / w);
            target.get(c, r, 0)
        };
        data.push(v);
    }
    let reference = FeatureMap::new(w, h, 1, data)?;
    let valid = mask.iter().filter(|m| **m).count();
    let overlap = valid as f64 / (w * h) as f64;
    if overlap < MIN_OVERLAP {
        return Err(Error::LowOverlap(100.0 * overlap));
    }
    let correspondences = locs.iter().zip(&mask).map(|(q, m)| if *m { *q } else { Vector2::new(f64::NAN, f64::NAN) }).collect();
    Ok(WarpedPair { reference, target, mask, correspondences, overlap })
}

/// Bilinear sample with the stencil clamped to the image, for points on the
/// one-pixel ring outside the interpolation domain. Leaves `out` untouched
/// further out.
fn sample_border_ring(map: &FeatureMap, q: &Vector2<f64>, out: &mut [f64]) {
    let (w, h) = (map.width() as f64, map.height() as f64);
    if !(q.x >= 0.0 && q.y >= 0.0 && q.x <= w - 1.0 && q.y <= h - 1.0) {
        return;
    }
    let (c0, r0) = (q.x.floor(), q.y.floor());
    let (fu, fv) = (q.x - c0, q.y - r0);
    let (c0, r0) = (c0 as usize, r0 as usize);
    let (c1, r1) = ((c0 + 1).min(map.width() - 1), (r0 + 1).min(map.height() - 1));
    for (ch, o) in out.iter_mut().enumerate() {
        *o = (1.0 - fu) * (1.0 - fv) * map.get(c0, r0, ch)
            + fu * (1.0 - fv) * map.get(c1, r0, ch)
            + (1.0 - fu) * fv * map.get(c0, r1, ch)
            + fu * fv * map.get(c1, r1, ch);
    }
}

/// Reference pyramid obtained by pulling every target level back through
/// the warp. Level-`l` reference pixel `p_l` takes the depth of full-res
/// pixel `p_l * 2^(4-l)`. Pixels that land on the target's outermost ring
/// use a clamped stencil; pixels that leave the target are set to zero.
pub fn pullback_pyramid(target: &FeaturePyramid, depth: &FeatureMap, pose: &SE3Pose, k: &CameraIntrinsics) -> Result<FeaturePyramid> {
    let mut levels = Vec::with_capacity(NUM_LEVELS);
    for level in 1..=NUM_LEVELS {
        let tl = target.level(level);
        let kl = k.at_level(level);
        let step = (1.0 / level_scale(level)) as usize;
        let d = tl.channels();
        let mut data = vec![0.0; tl.width() * tl.height() * d];
        for r in 0..tl.height() {
            for c in 0..tl.width() {
                let p = Vector2::new(c as f64, r as f64);
                let wp = warp_point(&p, depth.get(c * step, r * step, 0), pose, &kl, &kl)?;
                let i = (r * tl.width() + c) * d;
                if wp.valid {
                    tl.sample_into(wp.pixel.x, wp.pixel.y, &mut data[i..i + d], None, None);
                } else {
                    sample_border_ring(tl, &wp.pixel, &mut data[i..i + d]);
                }
            }
        }
        levels.push(FeatureMap::new(tl.width(), tl.height(), d, data)?);
    }
    FeaturePyramid::new(levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Twist};
    use crate::synth::scene::{generate_scene, SceneConfig};

    #[test]
    fn identity_pose_reproduces_scene() {
        let scene = generate_scene(3, &SceneConfig::default()).unwrap();
        let pair = warp_scene(&scene, &SE3Pose::identity()).unwrap();
        assert_eq!(pair.target, scene.texture);
        let k = scene.intrinsics;
        // The outermost domain pixels may round-trip to just outside it.
        for r in 2..k.height - 2 {
            for c in 2..k.width - 2 {
                assert!((pair.reference.get(c, r, 0) - scene.texture.get(c, r, 0)).abs() < 1e-12);
                let q =
                    pair.correspondence(c, r).unwrap_or_else(|| panic!("({c}, {r}) masked, {:?}", pair.correspondences[r * k.width + c]));
                assert!((q - Vector2::new(c as f64, r as f64)).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn correspondences_agree_with_warp_point() {
        let cfg = SceneConfig::default();
        let scene = generate_scene(5, &cfg).unwrap();
        let pose = se3_exp(&Twist::from_slice(&[0.05, -0.03, 0.1, 0.01, -0.02, 0.015]));
        let pair = warp_scene(&scene, &pose).unwrap();
        let k = scene.intrinsics;
        let mut checked = 0;
        for r in 0..k.height {
            for c in 0..k.width {
                if let Some(q) = pair.correspondence(c, r) {
                    let p = Vector2::new(c as f64, r as f64);
                    let wp = warp_point(&p, scene.depth_at(c, r), &pose, &k, &k).unwrap();
                    assert!((wp.pixel - q).amax() < 1e-9);
                    let v = pair.target.sample_value(&q).unwrap()[0];
                    assert!((v - pair.reference.get(c, r, 0)).abs() < 1e-12);
                    checked += 1;
                }
            }
        }
        assert!(checked > k.width * k.height / 2);
    }

    #[test]
    fn occluded_background_is_masked() {
        // A slab in front of a far plane, camera translating sideways: some
        // background pixels must fall behind the slab.
        let cfg = SceneConfig { slant: 0.0, ..Default::default() };
        let mut scene = generate_scene(1, &cfg).unwrap();
        scene.depth = FeatureMap::from_fn(cfg.width, cfg.height, 1, |c, _, _| if (60..90).contains(&c) { 2.0 } else { 8.0 });
        let pose = SE3Pose::from_translation(nalgebra::Vector3::new(0.2, 0.0, 0.0));
        let pair = warp_scene(&scene, &pose).unwrap();
        // The slab shifts 15 px, the background 3.75 px: background columns
        // just right of the slab end up under it.
        let row = 64;
        let hidden = (90..100).filter(|&c| pair.correspondence(c, row).is_none()).count();
        assert!(hidden > 0);
        assert!((60..90).all(|c| pair.correspondence(c, row).is_some()));
    }

    #[test]
    fn low_overlap_is_signalled() {
        let scene = generate_scene(2, &SceneConfig::default()).unwrap();
        let pose = SE3Pose::from_translation(nalgebra::Vector3::new(3.0, 0.0, 0.0));
        assert!(matches!(warp_scene(&scene, &pose), Err(Error::LowOverlap(_))));
    }
}
