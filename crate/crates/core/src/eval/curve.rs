//! Cumulative error curves and their area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of intervals of the threshold grid.
pub const CURVE_BINS: usize = 500;

/// Fraction of trials with error at most `thresholds[k] = max * k / 500`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulativeCurve {
    pub max_threshold: f64,
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
}

fn check(errors: &[f64], max_threshold: f64) -> Result<()> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("errors"));
    }
    if !(max_threshold.is_finite() && max_threshold > 0.0) {
        return Err(Error::Config(format!("curve threshold {max_threshold} must be positive")));
    }
    Ok(())
}

/// NaN errors are treated like infinite ones: never below any threshold.
pub fn cumulative_curve(errors: &[f64], max_threshold: f64) -> Result<CumulativeCurve> {
    check(errors, max_threshold)?;
    let mut sorted: Vec<f64> = errors.iter().map(|e| if e.is_nan() { f64::INFINITY } else { *e }).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let thresholds: Vec<f64> = (0..=CURVE_BINS).map(|k| max_threshold * k as f64 / CURVE_BINS as f64).collect();
    let fractions = thresholds.iter().map(|t| sorted.partition_point(|e| e <= t) as f64 / n).collect();
    Ok(CumulativeCurve { max_threshold, thresholds, fractions })
}

impl CumulativeCurve {
    /// Trapezoidal area under the curve as a percentage of `max_threshold`.
    pub fn auc(&self) -> f64 {
        let area: f64 = self.thresholds.windows(2).zip(self.fractions.windows(2)).map(|(t, f)| 0.5 * (f[0] + f[1]) * (t[1] - t[0])).sum();
        100.0 * area / self.max_threshold
    }
}

pub fn auc(errors: &[f64], max_threshold: f64) -> Result<f64> {
    Ok(cumulative_curve(errors, max_threshold)?.auc())
}
