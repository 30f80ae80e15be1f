//! Levenberg-Marquardt direct image alignment over feature pyramids.

pub mod config;
pub mod lm;
pub mod normal;
pub mod points_io;
pub mod pyramid;
pub mod residual;

pub use config::{DampingMode, LmConfig};
pub use lm::{run_lm, IterationTrace, LevelStats, LmProblem, StepOutcome, Termination};
pub use normal::{build_normal_equations, damp, solve_step, Jacobian, NormalEquations};
pub use points_io::{format_points, parse_points, read_points_file, write_points_file};
pub use pyramid::{align_coarse_to_fine, align_level, AlignmentResult};
pub use residual::{
    compute_jacobian, compute_residuals, huber_cost, huber_weight, huber_weights, projection_jacobian, LevelProblem, LmState, Residuals,
    SparsePoint,
};
