//! Pose initialization: feature correlation, a correlation-guided pose seed
//! for the solver, and the Euler-angle pose regression loss.

pub mod correlation;
pub mod euler;
pub mod seed;

pub use correlation::{correlation_map, l2_normalize_pixels, stack_neighbourhood, CorrelationMap, CORRELATION_BUDGET};
pub use euler::{posenet_loss, EulerPose, POSENET_LAMBDA};
pub use seed::{corr_pose_init, corr_pose_init_detailed, median_correlation_flow, CorrInit, CorrInitConfig};
