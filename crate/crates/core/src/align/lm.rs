//! The Levenberg-Marquardt iteration on SE(3).
//!
//! Each iteration damps the normal equations at the current pose, solves for
//! a twist, and tries `delta ⊞ pose`. A candidate is accepted only if it
//! strictly lowers the energy; lambda is then multiplied by
//! `lambda_success_mult`, otherwise by `lambda_fail_mult` and the pose is
//! kept. Degenerate solves count as rejected steps.

use serde::{Deserialize, Serialize};

use super::config::LmConfig;
use super::normal::{damp, solve_step, NormalEquations};
use crate::error::Result;
use crate::geometry::{boxplus, SE3Pose};

/// A least-squares energy over poses that can be linearized.
pub trait LmProblem {
    fn energy(&self, pose: &SE3Pose) -> Result<f64>;

    /// `(energy, H, b with b = -J^T W r, valid point count)` at `pose`.
    fn linearize(&self, pose: &SE3Pose) -> Result<(f64, NormalEquations, usize)>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    StepNorm,
    LambdaCap,
    MaxIterations,
    /// The level could not start (e.g. too few points in view).
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Accepted,
    Rejected,
    Degenerate,
    Converged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Lambda used to damp this iteration's system.
    pub lambda: f64,
    pub step_norm: f64,
    pub energy_before: f64,
    /// Candidate energy, if it could be evaluated.
    pub candidate_energy: Option<f64>,
    pub outcome: StepOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub iterations: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub final_lambda: f64,
    pub valid_points: usize,
    pub termination: Termination,
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<IterationTrace>,
}

impl LevelStats {
    fn failed(level: usize, reason: String) -> Self {
        LevelStats {
            level,
            iterations: 0,
            accepted: 0,
            rejected: 0,
            initial_energy: f64::NAN,
            final_energy: f64::NAN,
            final_lambda: f64::NAN,
            valid_points: 0,
            termination: Termination::Failed,
            failure: Some(reason),
            trace: Vec::new(),
        }
    }
}

/// Runs LM from `init` until a stopping rule fires. A problem that cannot be
/// linearized at `init` yields the initial pose and a `Failed` record.
pub fn run_lm<P: LmProblem + ?Sized>(problem: &P, init: &SE3Pose, config: &LmConfig, level: usize) -> (SE3Pose, LevelStats) {
    let (mut energy, mut system, mut valid) = match problem.linearize(init) {
        Ok(x) => x,
        Err(e) => return (*init, LevelStats::failed(level, e.to_string())),
    };
    let mut pose = *init;
    let mut lambda = config.lambda_init;
    let mut stats = LevelStats {
        level,
        iterations: 0,
        accepted: 0,
        rejected: 0,
        initial_energy: energy,
        final_energy: energy,
        final_lambda: lambda,
        valid_points: valid,
        termination: Termination::MaxIterations,
        failure: None,
        trace: Vec::new(),
    };

    for iteration in 1..=config.max_iters_per_level {
        stats.iterations = iteration;
        let damped = damp(&system.h, lambda, config.damping_mode);
        let mut record = IterationTrace {
            iteration,
            lambda,
            step_norm: f64::NAN,
            energy_before: energy,
            candidate_energy: None,
            outcome: StepOutcome::Degenerate,
        };

        match solve_step(&damped, &system.b, config.max_condition) {
            Err(_) => {
                stats.rejected += 1;
                lambda *= config.lambda_fail_mult;
            }
            Ok(delta) => {
                record.step_norm = delta.norm();
                if record.step_norm < config.step_norm_eps {
                    record.outcome = StepOutcome::Converged;
                    if config.trace {
                        stats.trace.push(record);
                    }
                    stats.termination = Termination::StepNorm;
                    break;
                }
                let candidate = boxplus(&delta, &pose);
                let cand_energy = problem.energy(&candidate).ok();
                record.candidate_energy = cand_energy;
                let relinearized = match cand_energy {
                    Some(e) if e < energy => problem.linearize(&candidate).ok(),
                    _ => None,
                };
                match relinearized {
                    Some((e, s, v)) => {
                        pose = candidate;
                        energy = e;
                        system = s;
                        valid = v;
                        stats.accepted += 1;
                        lambda *= config.lambda_success_mult;
                        record.outcome = StepOutcome::Accepted;
                    }
                    None => {
                        stats.rejected += 1;
                        lambda *= config.lambda_fail_mult;
                        record.outcome = StepOutcome::Rejected;
                    }
                }
            }
        }
        if config.trace {
            stats.trace.push(record);
        }
        if lambda > config.lambda_max {
            stats.termination = Termination::LambdaCap;
            break;
        }
    }
    stats.final_energy = energy;
    stats.final_lambda = lambda;
    stats.valid_points = valid;
    (pose, stats)
}
