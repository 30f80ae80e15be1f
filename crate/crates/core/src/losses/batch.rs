//! Correspondence batches, the combined loss, and its finite-difference
//! gradient with respect to entries of `F'`.

use std::f64::consts::TAU;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::terms::{gd_hinge, gn_value, LossConfig, PointGnSystem};
use crate::error::{Error, Result};
use crate::features::FeatureMap;

/// Largest entry set accepted by one [`loss_gradient_fd`] call.
pub const MAX_FD_ENTRIES: usize = 10_000;
/// Default central-difference step.
pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    /// Reference pixel on `F`.
    pub p: Vector2<f64>,
    /// True correspondence on `F'`.
    pub p_gt: Vector2<f64>,
    /// Negative drawn uniformly over the image.
    pub p_neg: Vector2<f64>,
    /// Negative on the ring of radius `gd_radius` around `p_gt`.
    pub p_gd: Vector2<f64>,
    /// Negative in the disk of radius `gn_radius` around `p_gt`.
    pub p_gn: Vector2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceBatch {
    pub samples: Vec<LossSample>,
    pub seed: u64,
}

/// Draws one set of negatives per usable correspondence, in input order.
///
/// Correspondences whose `p` leaves the reference domain, or whose `p_gt`
/// lies closer than `gd_radius` to the border of the target's interpolation
/// domain, are skipped. All sampled locations lie inside that domain.
pub fn sample_batch(
    seed: u64,
    correspondences: &[(Vector2<f64>, Vector2<f64>)],
    width: usize,
    height: usize,
    config: &LossConfig,
) -> Result<CorrespondenceBatch> {
    config.validate()?;
    if correspondences.is_empty() {
        return Err(Error::EmptyInput("ground-truth correspondences"));
    }
    let (lo_u, hi_u) = (1.0, width as f64 - 2.0);
    let (lo_v, hi_v) = (1.0, height as f64 - 2.0);
    let reach = config.gd_radius.max(config.gn_radius);
    if hi_u - lo_u <= 2.0 * reach || hi_v - lo_v <= 2.0 * reach {
        return Err(Error::ImageTooSmall(format!("{width}x{height} cannot hold a {reach} px sampling radius")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inside = |q: &Vector2<f64>, m: f64| q.x >= lo_u + m && q.x <= hi_u - m && q.y >= lo_v + m && q.y <= hi_v - m;
    let mut samples = Vec::with_capacity(correspondences.len());
    for (p, p_gt) in correspondences {
        if !inside(p, 0.0) || !inside(p_gt, reach) {
            continue;
        }
        let p_neg = Vector2::new(rng.random_range(lo_u..=hi_u), rng.random_range(lo_v..=hi_v));
        let a = rng.random_range(0.0..TAU);
        let p_gd = p_gt + config.gd_radius * Vector2::new(a.cos(), a.sin());
        let a = rng.random_range(0.0..TAU);
        let rad = config.gn_radius * rng.random::<f64>().sqrt();
        let p_gn = p_gt + rad * Vector2::new(a.cos(), a.sin());
        samples.push(LossSample { p: *p, p_gt: *p_gt, p_neg, p_gd, p_gn });
    }
    if samples.is_empty() {
        return Err(Error::InsufficientOverlap { valid: 0, required: 1 });
    }
    Ok(CorrespondenceBatch { samples, seed })
}

/// Reusable per-channel buffers for [`sample_terms`].
struct Scratch {
    fref: Vec<f64>,
    v: Vec<f64>,
    du: Vec<f64>,
    dv: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Scratch { fref: vec![0.0; d], v: vec![0.0; d], du: vec![0.0; d], dv: vec![0.0; d] }
    }
}

fn oob(map: &FeatureMap, q: &Vector2<f64>) -> Error {
    Error::SampleOutOfBounds { u: q.x, v: q.y, width: map.width(), height: map.height() }
}

fn terms_with(f: &FeatureMap, fp: &FeatureMap, s: &LossSample, config: &LossConfig, buf: &mut Scratch) -> Result<[f64; 4]> {
    let Scratch { fref, v, du, dv } = buf;
    if !f.sample_into(s.p.x, s.p.y, fref, None, None) {
        return Err(oob(f, &s.p));
    }
    let mut dist2 = |q: &Vector2<f64>| -> Result<f64> {
        if !fp.sample_into(q.x, q.y, v, None, None) {
            return Err(oob(fp, q));
        }
        Ok(v.iter().zip(fref.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
    };
    let pos = dist2(&s.p_gt)?;
    let neg = (config.margin - dist2(&s.p_neg)?).max(0.0);
    let mut system = |q: &Vector2<f64>| -> Result<PointGnSystem> {
        if !fp.sample_into(q.x, q.y, v, Some(du), Some(dv)) {
            return Err(oob(fp, q));
        }
        let mut h = Matrix2::zeros();
        let mut b = Vector2::zeros();
        for c in 0..v.len() {
            let row = Vector2::new(du[c], dv[c]);
            h += row * row.transpose();
            b += row * (v[c] - fref[c]);
        }
        Ok(PointGnSystem { r: Vec::new(), j: Vec::new(), h, b })
    };
    let sys = system(&s.p_gd)?;
    let gd = gd_hinge(&(s.p_gd + sys.step(config.lambda_f)), &s.p_gd, &s.p_gt, config.gd_margin);
    let sys = system(&s.p_gn)?;
    let gn = gn_value(&(s.p_gn + sys.step(config.epsilon)), &s.p_gt, &sys.h);
    Ok([pos, neg, gd, gn])
}

fn check_channels(f: &FeatureMap, fp: &FeatureMap) -> Result<()> {
    if f.channels() != fp.channels() {
        return Err(Error::DimensionMismatch(format!("F has {} channels, F' has {}", f.channels(), fp.channels())));
    }
    Ok(())
}

/// Unweighted term values `[pos, neg, gd, gn]` of one sample.
pub fn sample_terms(f: &FeatureMap, fp: &FeatureMap, s: &LossSample, config: &LossConfig) -> Result<[f64; 4]> {
    check_channels(f, fp)?;
    terms_with(f, fp, s, config, &mut Scratch::new(f.channels()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mean of each term over the batch, unweighted.
    pub pos: f64,
    pub neg: f64,
    pub gd: f64,
    pub gn: f64,
    /// Weighted sum of the means.
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [f64; 4] {
        [self.pos, self.neg, self.gd, self.gn]
    }
}

/// Per-sample term values in batch order.
pub fn batch_terms(f: &FeatureMap, fp: &FeatureMap, batch: &CorrespondenceBatch, config: &LossConfig) -> Result<Vec<[f64; 4]>> {
    check_channels(f, fp)?;
    let mut buf = Scratch::new(f.channels());
    batch.samples.iter().map(|s| terms_with(f, fp, s, config, &mut buf)).collect()
}

pub fn total_loss(f: &FeatureMap, fp: &FeatureMap, batch: &CorrespondenceBatch, config: &LossConfig) -> Result<LossBreakdown> {
    if batch.samples.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    check_channels(f, fp)?;
    let mut buf = Scratch::new(f.channels());
    let mut sums = [0.0; 4];
    for s in &batch.samples {
        let t = terms_with(f, fp, s, config, &mut buf)?;
        for k in 0..4 {
            sums[k] += t[k];
        }
    }
    let n = batch.samples.len() as f64;
    let means = sums.map(|x| x / n);
    let w = config.weights.as_array();
    let total = (0..4).map(|k| w[k] * means[k]).sum();
    Ok(LossBreakdown { pos: means[0], neg: means[1], gd: means[2], gn: means[3], total })
}

fn weighted(terms: [f64; 4], w: &[f64; 4]) -> f64 {
    (0..4).map(|k| w[k] * terms[k]).sum()
}

/// Which map of the pair a finite-difference gradient is taken over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapSide {
    /// `F`, sampled at the reference pixels.
    Reference,
    /// `F'`, sampled at the correspondences and negatives.
    Target,
}

/// Flat data indices of the map on `side` read by a sample.
fn touched_entries(map: &FeatureMap, side: MapSide, s: &LossSample, out: &mut Vec<usize>) {
    out.clear();
    let locations: &[Vector2<f64>] = match side {
        MapSide::Reference => std::slice::from_ref(&s.p),
        MapSide::Target => &[s.p_gt, s.p_neg, s.p_gd, s.p_gn],
    };
    for q in locations {
        if let Some(st) = map.stencil(q.x, q.y) {
            for (c, r, _) in st {
                for ch in 0..map.channels() {
                    out.push(map.index(c, r, ch));
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
}

/// Central-difference gradient of [`total_loss`] with respect to the given
/// flat entries of `F'`, in the same order.
///
/// Only samples whose stencils read an entry are re-evaluated for it, which
/// gives the same differences as re-evaluating the whole batch.
pub fn loss_gradient_fd(
    f: &FeatureMap,
    fp: &FeatureMap,
    batch: &CorrespondenceBatch,
    config: &LossConfig,
    entries: &[usize],
    step: f64,
) -> Result<Vec<f64>> {
    loss_gradient_fd_on(MapSide::Target, f, fp, batch, config, entries, step)
}

/// [`loss_gradient_fd`] over either map of the pair.
pub fn loss_gradient_fd_on(
    side: MapSide,
    f: &FeatureMap,
    fp: &FeatureMap,
    batch: &CorrespondenceBatch,
    config: &LossConfig,
    entries: &[usize],
    step: f64,
) -> Result<Vec<f64>> {
    if entries.len() > MAX_FD_ENTRIES {
        return Err(Error::Config(format!("{} entries exceed the per-call limit of {MAX_FD_ENTRIES}", entries.len())));
    }
    if batch.samples.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    check_channels(f, fp)?;
    let varied = match side {
        MapSide::Reference => f,
        MapSide::Target => fp,
    };
    if let Some(&bad) = entries.iter().find(|&&e| e >= varied.data().len()) {
        return Err(Error::DimensionMismatch(format!("entry {bad} is outside the map ({} values)", varied.data().len())));
    }
    // Which samples read each entry.
    let mut readers: Vec<Vec<u32>> = vec![Vec::new(); varied.data().len()];
    let mut scratch = Vec::with_capacity(64);
    for (i, s) in batch.samples.iter().enumerate() {
        touched_entries(varied, side, s, &mut scratch);
        for &e in &scratch {
            readers[e].push(i as u32);
        }
    }
    let w = config.weights.as_array();
    let n = batch.samples.len() as f64;
    let mut work = varied.clone();
    let mut buf = Scratch::new(f.channels());
    let mut grad = Vec::with_capacity(entries.len());
    for &e in entries {
        let list = &readers[e];
        if list.is_empty() {
            grad.push(0.0);
            continue;
        }
        let orig = work.data()[e];
        let mut eval = |x: f64| -> Result<f64> {
            work.data_mut()[e] = x;
            let (a, b) = match side {
                MapSide::Reference => (&work, fp),
                MapSide::Target => (f, &work),
            };
            let mut acc = 0.0;
            for &i in list {
                acc += weighted(terms_with(a, b, &batch.samples[i as usize], config, &mut buf)?, &w);
            }
            Ok(acc)
        };
        let plus = eval(orig + step)?;
        let minus = eval(orig - step)?;
        work.data_mut()[e] = orig;
        grad.push((plus - minus) / (2.0 * step * n));
    }
    Ok(grad)
}
