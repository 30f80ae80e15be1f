//! The 6x6 normal equations `H = J^T W J`, `b = -J^T W r`, damping, and the
//! symmetric solve.

use nalgebra::{Matrix6, Vector6};

use super::config::DampingMode;
use crate::error::{Error, Result};
use crate::geometry::Twist;

/// Diagonal entries below this are replaced by it under Marquardt damping.
pub const MARQUARDT_DIAG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalEquations {
    pub h: Matrix6<f64>,
    pub b: Vector6<f64>,
}

impl NormalEquations {
    pub fn zeros() -> Self {
        NormalEquations { h: Matrix6::zeros(), b: Vector6::zeros() }
    }

    /// Adds `w * row^T row` to `H` and `-w * row * r` to `b`.
    #[inline]
    pub fn accumulate(&mut self, row: &Vector6<f64>, residual: f64, weight: f64) {
        for c in 0..6 {
            let wc = weight * row[c];
            for r in c..6 {
                self.h[(r, c)] += wc * row[r];
            }
            self.b[c] -= wc * residual;
        }
    }

    /// Mirrors the accumulated lower triangle into the upper one.
    pub fn symmetrize(&mut self) {
        for c in 0..6 {
            for r in (c + 1)..6 {
                self.h[(c, r)] = self.h[(r, c)];
            }
        }
    }

    pub fn add(&mut self, other: &NormalEquations) {
        self.h += other.h;
        self.b += other.b;
    }
}

/// Stacked Jacobian rows; row `i` belongs to point `i / channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobian {
    pub rows: Vec<Vector6<f64>>,
    pub channels: usize,
}

/// `H = J^T W J` and `b = -J^T W r` with one weight per point.
pub fn build_normal_equations(jacobian: &Jacobian, weights: &[f64], residuals: &[f64]) -> Result<NormalEquations> {
    let d = jacobian.channels;
    if jacobian.rows.len() != residuals.len() || weights.len() * d != residuals.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} jacobian rows, {} residuals, {} weights x {d} channels",
            jacobian.rows.len(),
            residuals.len(),
            weights.len()
        )));
    }
    let mut ne = NormalEquations::zeros();
    for (i, (row, r)) in jacobian.rows.iter().zip(residuals).enumerate() {
        ne.accumulate(row, *r, weights[i / d]);
    }
    ne.symmetrize();
    Ok(ne)
}

pub fn damp(h: &Matrix6<f64>, lambda: f64, mode: DampingMode) -> Matrix6<f64> {
    let mut out = *h;
    for i in 0..6 {
        out[(i, i)] += match mode {
            DampingMode::Levenberg => lambda,
            DampingMode::Marquardt => {
                let d = h[(i, i)];
                lambda * if d < MARQUARDT_DIAG_FLOOR { MARQUARDT_DIAG_FLOOR } else { d }
            }
        };
    }
    out
}

/// Solves `H' delta = b` by Cholesky after a condition-number check.
pub fn solve_step(h_damped: &Matrix6<f64>, b: &Vector6<f64>, max_condition: f64) -> Result<Twist> {
    let eig = h_damped.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || !max.is_finite() {
        return Err(Error::DegenerateSystem(if min > 0.0 { f64::INFINITY } else { max / min.abs().max(f64::MIN_POSITIVE) }));
    }
    let cond = max / min;
    if cond > max_condition {
        return Err(Error::DegenerateSystem(cond));
    }
    let chol = h_damped.cholesky().ok_or(Error::DegenerateSystem(cond))?;
    Ok(Twist(chol.solve(b)))
}
