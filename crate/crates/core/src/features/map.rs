use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::in_interp_domain;

/// Dense `height x width x channels` map, row-major `(row, col, channel)`.
///
/// Immutable once built; sampling is safe from any number of threads.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

/// Bilinear sample with the analytic derivative of the interpolant.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub value: Vec<f64>,
    /// dF/du per channel.
    pub du: Vec<f64>,
    /// dF/dv per channel.
    pub dv: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::DimensionMismatch(format!("empty map {width}x{height}x{channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!("{} values for a {width}x{height}x{channels} map", data.len())));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Format(format!("non-finite value at index {i}")));
        }
        Ok(FeatureMap { width, height, channels, data })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        FeatureMap { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for row in 0..height {
            for col in 0..width {
                for ch in 0..channels {
                    data.push(f(col, row, ch));
                }
            }
        }
        FeatureMap { width, height, channels, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize, ch: usize) -> f64 {
        self.data[self.index(col, row, ch)]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, ch: usize, value: f64) {
        let i = self.index(col, row, ch);
        self.data[i] = value;
    }

    pub fn pixel(&self, col: usize, row: usize) -> &[f64] {
        let i = self.index(col, row, 0);
        &self.data[i..i + self.channels]
    }

    pub fn in_domain(&self, q: &Vector2<f64>) -> bool {
        in_interp_domain(q, self.width, self.height)
    }

    /// Extracts a single channel as a `D = 1` map.
    pub fn channel(&self, ch: usize) -> FeatureMap {
        FeatureMap::from_fn(self.width, self.height, 1, |c, r, _| self.get(c, r, ch))
    }

    /// Stacks maps of equal size along the channel axis.
    pub fn stack(maps: &[FeatureMap]) -> Result<FeatureMap> {
        let first = maps.first().ok_or(Error::EmptyInput("no maps to stack"))?;
        let (w, h) = (first.width, first.height);
        if maps.iter().any(|m| m.width != w || m.height != h) {
            return Err(Error::DimensionMismatch("stacked maps differ in size".into()));
        }
        let d: usize = maps.iter().map(|m| m.channels).sum();
        let mut data = Vec::with_capacity(w * h * d);
        for row in 0..h {
            for col in 0..w {
                for m in maps {
                    data.extend_from_slice(m.pixel(col, row));
                }
            }
        }
        Ok(FeatureMap { width: w, height: h, channels: d, data })
    }

    /// Bilinear interpolation plus its gradient, written into caller buffers
    /// of length `channels`. Returns `false` (buffers untouched) outside the
    /// interpolation domain `[1, w-2] x [1, h-2]`.
    ///
    /// The gradient is that of the interpolant itself, constant within each
    /// unit cell; on a cell boundary the cell to the lower-right is used.
    #[inline]
    pub fn sample_into(&self, u: f64, v: f64, value: &mut [f64], du: Option<&mut [f64]>, dv: Option<&mut [f64]>) -> bool {
        if !(u >= 1.0 && v >= 1.0 && u <= self.width as f64 - 2.0 && v <= self.height as f64 - 2.0) {
            return false;
        }
        let c0 = u.floor();
        let r0 = v.floor();
        let fu = u - c0;
        let fv = v - r0;
        let (c0, r0) = (c0 as usize, r0 as usize);
        let d = self.channels;
        let i00 = (r0 * self.width + c0) * d;
        let i01 = i00 + d;
        let i10 = i00 + self.width * d;
        let i11 = i10 + d;
        let w00 = (1.0 - fu) * (1.0 - fv);
        let w01 = fu * (1.0 - fv);
        let w10 = (1.0 - fu) * fv;
        let w11 = fu * fv;
        let px = &self.data;
        for ch in 0..d {
            value[ch] = w00 * px[i00 + ch] + w01 * px[i01 + ch] + w10 * px[i10 + ch] + w11 * px[i11 + ch];
        }
        if let Some(du) = du {
            for ch in 0..d {
                du[ch] = (1.0 - fv) * (px[i01 + ch] - px[i00 + ch]) + fv * (px[i11 + ch] - px[i10 + ch]);
            }
        }
        if let Some(dv) = dv {
            for ch in 0..d {
                dv[ch] = (1.0 - fu) * (px[i10 + ch] - px[i00 + ch]) + fu * (px[i11 + ch] - px[i01 + ch]);
            }
        }
        true
    }

    pub fn bilinear_sample(&self, q: &Vector2<f64>) -> Result<Sample> {
        let d = self.channels;
        let mut s = Sample { value: vec![0.0; d], du: vec![0.0; d], dv: vec![0.0; d] };
        if self.sample_into(q.x, q.y, &mut s.value, Some(&mut s.du), Some(&mut s.dv)) {
            Ok(s)
        } else {
            Err(Error::SampleOutOfBounds { u: q.x, v: q.y, width: self.width, height: self.height })
        }
    }

    /// Bilinear value only.
    pub fn sample_value(&self, q: &Vector2<f64>) -> Result<Vec<f64>> {
        let mut value = vec![0.0; self.channels];
        if self.sample_into(q.x, q.y, &mut value, None, None) {
            Ok(value)
        } else {
            Err(Error::SampleOutOfBounds { u: q.x, v: q.y, width: self.width, height: self.height })
        }
    }

    /// Corner indices and weights of the bilinear stencil at `(u, v)`.
    pub fn stencil(&self, u: f64, v: f64) -> Option<[(usize, usize, f64); 4]> {
        if !self.in_domain(&Vector2::new(u, v)) {
            return None;
        }
        let c0 = u.floor();
        let r0 = v.floor();
        let fu = u - c0;
        let fv = v - r0;
        let (c, r) = (c0 as usize, r0 as usize);
        Some([(c, r, (1.0 - fu) * (1.0 - fv)), (c + 1, r, fu * (1.0 - fv)), (c, r + 1, (1.0 - fu) * fv), (c + 1, r + 1, fu * fv)])
    }

    pub fn mean(&self, ch: usize) -> f64 {
        let n = (self.width * self.height) as f64;
        self.data.iter().skip(ch).step_by(self.channels).sum::<f64>() / n
    }
}
