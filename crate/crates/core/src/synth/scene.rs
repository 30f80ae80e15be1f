//! Procedural scenes: value-noise texture plus a smooth slanted depth field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::pyramid::central_gradient;
use crate::features::FeatureMap;
use crate::geometry::CameraIntrinsics;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels (both axes).
    pub focal: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    /// Range the mean scene depth is drawn from.
    pub base_depth: [f64; 2],
    /// Maximum depth change across the image width/height from the slant.
    pub slant: f64,
    /// Add a closer rectangular slab, creating depth edges and occlusions.
    pub discontinuity: bool,
    /// Lattice spacing in pixels of each noise octave, coarse first.
    pub octave_cells: Vec<f64>,
    /// Amplitude ratio between successive octaves.
    pub persistence: f64,
    /// Overall texture contrast; 0 gives a constant image.
    pub contrast: f64,
    /// Gradient magnitude (intensity units per pixel) that counts as textured.
    pub gradient_threshold: f64,
    /// Fraction of pixels that must exceed `gradient_threshold`.
    pub min_gradient_coverage: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 160,
            height: 128,
            focal: 150.0,
            depth_min: 1.0,
            depth_max: 10.0,
            base_depth: [3.0, 6.0],
            slant: 2.0,
            discontinuity: true,
            octave_cells: vec![48.0, 24.0, 12.0, 6.0, 3.0],
            persistence: 0.6,
            contrast: 1.0,
            gradient_threshold: 0.01,
            min_gradient_coverage: 0.3,
        }
    }
}

impl SceneConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        if self.width % 8 != 0 || self.height % 8 != 0 {
            return Err(Error::Config(format!("scene size {}x{} must be a multiple of 8", self.width, self.height)));
        }
        CameraIntrinsics::new(self.focal, self.focal, self.width as f64 / 2.0, self.height as f64 / 2.0, self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics()?;
        if !(0.0 < self.depth_min && self.depth_min < self.depth_max) {
            return Err(Error::Config("need 0 < depth_min < depth_max".into()));
        }
        if !(self.base_depth[0] <= self.base_depth[1]) {
            return Err(Error::Config("base_depth range is empty".into()));
        }
        if self.octave_cells.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::Config("octave cell sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    /// Single-channel intensity in roughly `[0, 1]`.
    pub texture: FeatureMap,
    /// Reference-view depth per pixel.
    pub depth: FeatureMap,
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
    /// Fraction of pixels whose gradient magnitude exceeds the threshold.
    pub gradient_coverage: f64,
}

impl SyntheticScene {
    pub fn depth_at(&self, col: usize, row: usize) -> f64 {
        self.depth.get(col, row, 0)
    }

    /// Fails when too little of the texture has usable gradients.
    pub fn check_texture(&self, config: &SceneConfig) -> Result<()> {
        if self.gradient_coverage < config.min_gradient_coverage {
            return Err(Error::Config(format!(
                "scene {}: only {:.1}% of pixels are textured, {:.1}% required",
                self.seed,
                100.0 * self.gradient_coverage,
                100.0 * config.min_gradient_coverage
            )));
        }
        Ok(())
    }
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// One octave of value noise on a lattice with spacing `cell`.
fn value_noise(rng: &mut ChaCha8Rng, width: usize, height: usize, cell: f64) -> Vec<f64> {
    let lw = (width as f64 / cell).ceil() as usize + 2;
    let lh = (height as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..lw * lh).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(width * height);
    for r in 0..height {
        let y = r as f64 / cell;
        let (y0, ty) = (y.floor() as usize, fade(y - y.floor()));
        for c in 0..width {
            let x = c as f64 / cell;
            let (x0, tx) = (x.floor() as usize, fade(x - x.floor()));
            let at = |i: usize, j: usize| lattice[j * lw + i];
            let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
            let bottom = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Fraction of pixels with central-difference gradient magnitude above `threshold`.
pub fn gradient_coverage(image: &FeatureMap, threshold: f64) -> f64 {
    let mut count = 0usize;
    for r in 0..image.height() {
        for c in 0..image.width() {
            let (gu, gv) = central_gradient(image, c, r, 0);
            if (gu * gu + gv * gv).sqrt() > threshold {
                count += 1;
            }
        }
    }
    count as f64 / (image.width() * image.height()) as f64
}

/// Deterministic in `seed`.
pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<SyntheticScene> {
    config.validate()?;
    let k = config.intrinsics()?;
    let (w, h) = (config.width, config.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut tex = vec![0.0; w * h];
    let mut amp = 1.0;
    let mut total = 0.0;
    for &cell in &config.octave_cells {
        let layer = value_noise(&mut rng, w, h, cell);
        for (t, l) in tex.iter_mut().zip(layer) {
            *t += amp * l;
        }
        total += amp;
        amp *= config.persistence;
    }
    // Stretch to [0, 1] around 0.5, then scale by contrast.
    let (lo, hi) = tex.iter().fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(*x), b.max(*x)));
    let span = if hi - lo > 1e-12 { hi - lo } else { total.max(1.0) };
    for t in tex.iter_mut() {
        *t = 0.5 + config.contrast * ((*t - lo) / span - 0.5);
    }
    let texture = FeatureMap::new(w, h, 1, tex)?;

    let base = rng.random_range(config.base_depth[0]..=config.base_depth[1]);
    let slant_u = rng.random_range(-config.slant..=config.slant);
    let slant_v = rng.random_range(-config.slant..=config.slant);
    let slab = if config.discontinuity {
        let bw = rng.random_range(0.2..0.4) * w as f64;
        let bh = rng.random_range(0.2..0.4) * h as f64;
        let x0 = rng.random_range(0.1..0.9) * w as f64 - bw / 2.0;
        let y0 = rng.random_range(0.1..0.9) * h as f64 - bh / 2.0;
        Some((x0, y0, bw, bh, rng.random_range(0.55..0.75)))
    } else {
        None
    };
    let depth = FeatureMap::from_fn(w, h, 1, |c, r, _| {
        let (x, y) = (c as f64, r as f64);
        let mut d = base + slant_u * (x - k.cx) / w as f64 + slant_v * (y - k.cy) / h as f64;
        if let Some((x0, y0, bw, bh, factor)) = slab {
            if x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh {
                d *= factor;
            }
        }
        d.clamp(config.depth_min, config.depth_max)
    });

    let coverage = gradient_coverage(&texture, config.gradient_threshold);
    let scene = SyntheticScene { texture, depth, intrinsics: k, seed, gradient_coverage: coverage };
    if let Err(e) = scene.check_texture(config) {
        log::warn!("{e}");
    }
    Ok(scene)
}
