//! Feature-metric direct image alignment.
//!
//! Estimates the relative SE(3) pose between a reference and a target view
//! by Levenberg-Marquardt over four-level feature pyramids, given sparse
//! reference points with known depth. Also contains the point-wise training
//! losses that shape feature maps for this solver, a correlation-based pose
//! seeder, a synthetic ground-truth generator, and AUC evaluation.

pub mod align;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod init;
pub mod losses;
pub mod synth;

pub use error::{Error, Result};
