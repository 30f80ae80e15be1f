//! Four-level feature pyramids and the hand-crafted baseline features used in
//! place of a learned encoder.

use serde::{Deserialize, Serialize};

use super::map::FeatureMap;
use crate::error::{Error, Result};
use crate::geometry::NUM_LEVELS;

/// Levels `1..=4`, level 1 being the coarsest at `(w/8, h/8)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<FeatureMap>,
}

impl FeaturePyramid {
    /// Validates the size contract: level `l` is `(w, h) / 2^(4-l)` where
    /// `(w, h)` is the size of level 4.
    pub fn new(levels: Vec<FeatureMap>) -> Result<Self> {
        if levels.len() != NUM_LEVELS {
            return Err(Error::Format(format!("pyramid needs {NUM_LEVELS} levels, got {}", levels.len())));
        }
        let full = &levels[NUM_LEVELS - 1];
        let (w, h) = (full.width(), full.height());
        if w % 8 != 0 || h % 8 != 0 {
            return Err(Error::Format(format!("level 4 size {w}x{h} is not a multiple of 8")));
        }
        for (i, m) in levels.iter().enumerate() {
            let shift = NUM_LEVELS - 1 - i;
            let (ew, eh) = (w >> shift, h >> shift);
            if m.width() != ew || m.height() != eh {
                return Err(Error::Format(format!("level {} is {}x{}, expected {ew}x{eh}", i + 1, m.width(), m.height())));
            }
        }
        Ok(FeaturePyramid { levels })
    }

    /// Level `l` in `1..=4`.
    pub fn level(&self, l: usize) -> &FeatureMap {
        &self.levels[l - 1]
    }

    pub fn level_mut(&mut self, l: usize) -> &mut FeatureMap {
        &mut self.levels[l - 1]
    }

    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }

    pub fn into_levels(self) -> Vec<FeatureMap> {
        self.levels
    }

    pub fn width(&self) -> usize {
        self.levels[NUM_LEVELS - 1].width()
    }

    pub fn height(&self) -> usize {
        self.levels[NUM_LEVELS - 1].height()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Append a gradient-magnitude channel after intensity.
    pub gradient_channel: bool,
    /// Rescale each channel of each level to zero mean and unit standard deviation.
    pub normalize: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { gradient_channel: true, normalize: true }
    }
}

impl BaselineConfig {
    pub fn channels(&self) -> usize {
        1 + self.gradient_channel as usize
    }
}

/// 2x2 box average. Odd trailing rows/columns are dropped.
pub fn downsample_area(map: &FeatureMap) -> FeatureMap {
    let (w, h) = (map.width() / 2, map.height() / 2);
    FeatureMap::from_fn(w, h, map.channels(), |c, r, ch| {
        let (c2, r2) = (2 * c, 2 * r);
        0.25 * (map.get(c2, r2, ch) + map.get(c2 + 1, r2, ch) + map.get(c2, r2 + 1, ch) + map.get(c2 + 1, r2 + 1, ch))
    })
}

/// Central-difference gradient magnitude per channel (one-sided at borders).
pub fn gradient_magnitude(map: &FeatureMap) -> FeatureMap {
    let (w, h) = (map.width(), map.height());
    FeatureMap::from_fn(w, h, map.channels(), |c, r, ch| {
        let (gu, gv) = central_gradient(map, c, r, ch);
        (gu * gu + gv * gv).sqrt()
    })
}

pub(crate) fn central_gradient(map: &FeatureMap, c: usize, r: usize, ch: usize) -> (f64, f64) {
    let (w, h) = (map.width(), map.height());
    let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
    let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
    let gu = (map.get(cr, r, ch) - map.get(cl, r, ch)) / (cr - cl).max(1) as f64;
    let gv = (map.get(c, rd, ch) - map.get(c, ru, ch)) / (rd - ru).max(1) as f64;
    (gu, gv)
}

/// Shifts and scales every channel to zero mean and unit standard
/// deviation. Channels with (near) zero spread are only centered.
pub fn normalize_channels(map: &mut FeatureMap) {
    let d = map.channels();
    let n = (map.width() * map.height()) as f64;
    for ch in 0..d {
        let mean = map.data().iter().skip(ch).step_by(d).sum::<f64>() / n;
        let var = map.data().iter().skip(ch).step_by(d).map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
        for x in map.data_mut().iter_mut().skip(ch).step_by(d) {
            *x = (*x - mean) * scale;
        }
    }
}

/// Reflect-pads a map on the right and bottom so both sides are multiples of 8.
pub fn pad_to_multiple_of_8(map: &FeatureMap) -> FeatureMap {
    let w = map.width().div_ceil(8) * 8;
    let h = map.height().div_ceil(8) * 8;
    if w == map.width() && h == map.height() {
        return map.clone();
    }
    let reflect = |i: usize, n: usize| -> usize {
        if i < n {
            i
        } else {
            let over = i - n + 1;
            n.saturating_sub(1 + over)
        }
    };
    FeatureMap::from_fn(w, h, map.channels(), |c, r, ch| map.get(reflect(c, map.width()), reflect(r, map.height()), ch))
}

/// Baseline features: intensity (+ gradient magnitude) at four scales via
/// 2x area downsampling.
pub fn build_baseline_pyramid(image: &FeatureMap, config: &BaselineConfig) -> Result<FeaturePyramid> {
    if image.channels() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "baseline pyramid expects a single-channel image, got {} channels",
            image.channels()
        )));
    }
    if image.width() < 8 || image.height() < 8 {
        return Err(Error::ImageTooSmall(format!("{}x{} is below 8x8", image.width(), image.height())));
    }
    let padded = pad_to_multiple_of_8(image);
    let mut intensity = vec![padded];
    for _ in 1..NUM_LEVELS {
        let next = downsample_area(intensity.last().unwrap());
        intensity.push(next);
    }
    intensity.reverse();

    let levels = intensity
        .into_iter()
        .map(|img| {
            let mut level = if config.gradient_channel {
                let g = gradient_magnitude(&img);
                FeatureMap::stack(&[img, g]).expect("same size")
            } else {
                img
            };
            if config.normalize {
                normalize_channels(&mut level);
            }
            level
        })
        .collect();
    FeaturePyramid::new(levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_sizes() {
        let img = FeatureMap::from_fn(64, 64, 1, |c, r, _| ((c * 7 + r * 3) % 11) as f64);
        let pyr = build_baseline_pyramid(&img, &BaselineConfig::default()).unwrap();
        let sizes: Vec<_> = pyr.levels().iter().map(|m| (m.width(), m.height(), m.channels())).collect();
        assert_eq!(sizes, vec![(8, 8, 2), (16, 16, 2), (32, 32, 2), (64, 64, 2)]);
    }

    #[test]
    fn constant_image() {
        let img = FeatureMap::from_fn(32, 24, 1, |_, _, _| 0.7);
        for normalize in [false, true] {
            let cfg = BaselineConfig { gradient_channel: true, normalize };
            let pyr = build_baseline_pyramid(&img, &cfg).unwrap();
            for level in pyr.levels() {
                let c0 = level.get(0, 0, 0);
                for r in 0..level.height() {
                    for c in 0..level.width() {
                        assert!((level.get(c, r, 0) - c0).abs() < 1e-15);
                        assert_eq!(level.get(c, r, 1), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn area_downsampling_preserves_mean() {
        let img = FeatureMap::from_fn(48, 32, 1, |c, r, _| if ((c / 3) + (r / 5)) % 2 == 0 { 1.0 } else { 0.0 });
        let cfg = BaselineConfig { gradient_channel: false, normalize: false };
        let pyr = build_baseline_pyramid(&img, &cfg).unwrap();
        let full = img.mean(0);
        for level in pyr.levels() {
            assert!((level.mean(0) - full).abs() < 1e-9);
        }
    }

    #[test]
    fn normalized_channels_have_unit_moments() {
        let img = FeatureMap::from_fn(32, 32, 1, |c, r, _| ((c as f64) * 0.3).sin() + (r as f64 * 0.2).cos());
        let pyr = build_baseline_pyramid(&img, &BaselineConfig::default()).unwrap();
        for level in pyr.levels() {
            for ch in 0..2 {
                let mean = level.mean(ch);
                let var: f64 = level.data().iter().skip(ch).step_by(2).map(|x| (x - mean).powi(2)).sum::<f64>()
                    / (level.width() * level.height()) as f64;
                assert!(mean.abs() < 1e-12);
                assert!((var - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pads_odd_sizes() {
        let img = FeatureMap::from_fn(30, 21, 1, |c, r, _| (c + r) as f64);
        let pyr = build_baseline_pyramid(&img, &BaselineConfig::default()).unwrap();
        assert_eq!((pyr.width(), pyr.height()), (32, 24));
    }

    #[test]
    fn rejects_degenerate_images() {
        let img = FeatureMap::zeros(7, 16, 1);
        assert!(matches!(build_baseline_pyramid(&img, &BaselineConfig::default()), Err(Error::ImageTooSmall(_))));
        let two = FeatureMap::zeros(16, 16, 2);
        assert!(build_baseline_pyramid(&two, &BaselineConfig::default()).is_err());
    }

    #[test]
    fn pyramid_rejects_bad_level_sizes() {
        let levels =
            vec![FeatureMap::zeros(8, 8, 1), FeatureMap::zeros(16, 16, 1), FeatureMap::zeros(30, 32, 1), FeatureMap::zeros(64, 64, 1)];
        let err = FeaturePyramid::new(levels).unwrap_err();
        assert!(err.to_string().contains("level 3"), "{err}");
    }
}
