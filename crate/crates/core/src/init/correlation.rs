//! All-pairs feature correlation between two small maps.

use crate::error::{Error, Result};
use crate::features::FeatureMap;

/// Largest `width * height` accepted for either input map.
pub const CORRELATION_BUDGET: usize = 4096;

/// Dot products between every reference pixel `(i, j)` and every target
/// pixel `(i', j')`, stored as one contiguous slab of `w' * h'` values per
/// reference pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMap {
    width: usize,
    height: usize,
    target_width: usize,
    target_height: usize,
    values: Vec<f64>,
}

/// Copies of `map` with every pixel vector scaled to unit length; zero
/// vectors stay zero.
pub fn l2_normalize_pixels(map: &FeatureMap) -> FeatureMap {
    let d = map.channels();
    let mut out = map.clone();
    for px in out.data_mut().chunks_mut(d) {
        let norm = px.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            px.iter_mut().for_each(|x| *x /= norm);
        }
    }
    out
}

/// Concatenates the `(2r+1)^2` neighbours of every pixel (clamped at the
/// border) into one descriptor of `D * (2r+1)^2` channels.
pub fn stack_neighbourhood(map: &FeatureMap, radius: usize) -> FeatureMap {
    let d = map.channels();
    let k = 2 * radius + 1;
    let (w, h) = (map.width() as isize, map.height() as isize);
    let r = radius as isize;
    FeatureMap::from_fn(map.width(), map.height(), d * k * k, |c, row, ch| {
        let tap = ch / d;
        let dx = (tap % k) as isize - r;
        let dy = (tap / k) as isize - r;
        let cc = (c as isize + dx).clamp(0, w - 1) as usize;
        let rr = (row as isize + dy).clamp(0, h - 1) as usize;
        map.get(cc, rr, ch % d)
    })
}

fn check_budget(map: &FeatureMap) -> Result<()> {
    let pixels = map.width() * map.height();
    if pixels > CORRELATION_BUDGET {
        return Err(Error::CorrelationBudget { pixels, budget: CORRELATION_BUDGET });
    }
    Ok(())
}

impl CorrelationMap {
    /// Dot products of the L2-normalized pixel vectors, before any slab
    /// normalization. Every value lies in `[-1, 1]`.
    pub fn raw(f: &FeatureMap, f_prime: &FeatureMap) -> Result<Self> {
        if f.channels() != f_prime.channels() {
            return Err(Error::DimensionMismatch(format!("correlation inputs have {} and {} channels", f.channels(), f_prime.channels())));
        }
        check_budget(f)?;
        check_budget(f_prime)?;
        let a = l2_normalize_pixels(f);
        let b = l2_normalize_pixels(f_prime);
        let d = f.channels();
        let slab = f_prime.width() * f_prime.height();
        let mut values = Vec::with_capacity(f.width() * f.height() * slab);
        for pa in a.data().chunks(d) {
            for pb in b.data().chunks(d) {
                values.push(pa.iter().zip(pb).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0));
            }
        }
        Ok(CorrelationMap { width: f.width(), height: f.height(), target_width: f_prime.width(), target_height: f_prime.height(), values })
    }

    /// Scales the slab of every reference pixel to unit L2 norm; all-zero
    /// slabs are left untouched.
    pub fn normalize_slabs(&mut self) {
        let n = self.target_width * self.target_height;
        for slab in self.values.chunks_mut(n) {
            let norm = slab.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                slab.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn target_width(&self) -> usize {
        self.target_width
    }

    pub fn target_height(&self) -> usize {
        self.target_height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slab(&self, i: usize, j: usize) -> &[f64] {
        let n = self.target_width * self.target_height;
        let at = (j * self.width + i) * n;
        &self.values[at..at + n]
    }

    /// `c(i, j, i', j')` with `i` a column and `j` a row.
    pub fn get(&self, i: usize, j: usize, ti: usize, tj: usize) -> f64 {
        self.slab(i, j)[tj * self.target_width + ti]
    }

    /// Target pixel of highest correlation with reference pixel `(i, j)`;
    /// ties go to the first in row-major order. `None` for an all-zero slab.
    pub fn argmax(&self, i: usize, j: usize) -> Option<(usize, usize)> {
        let slab = self.slab(i, j);
        if slab.iter().all(|x| *x == 0.0) {
            return None;
        }
        let mut best = 0;
        for (k, v) in slab.iter().enumerate() {
            if *v > slab[best] {
                best = k;
            }
        }
        Some((best % self.target_width, best / self.target_width))
    }
}

/// Pixel-normalized all-pairs correlation followed by slab normalization.
pub fn correlation_map(f: &FeatureMap, f_prime: &FeatureMap) -> Result<CorrelationMap> {
    let mut c = CorrelationMap::raw(f, f_prime)?;
    c.normalize_slabs();
    Ok(c)
}
