use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid depth {0}: depth must be positive")]
    InvalidDepth(f64),

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("sample ({u:.3}, {v:.3}) outside the interpolation domain of a {width}x{height} map")]
    SampleOutOfBounds { u: f64, v: f64, width: usize, height: usize },

    #[error("rotation angle {0} rad is too close to pi for a stable logarithm")]
    NearSingularRotation(f64),

    #[error("insufficient overlap: {valid} valid points, {required} required")]
    InsufficientOverlap { valid: usize, required: usize },

    #[error("degenerate linear system (condition number {0:.3e})")]
    DegenerateSystem(f64),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("correlation budget exceeded: {pixels} pixels per map, at most {budget} allowed")]
    CorrelationBudget { pixels: usize, budget: usize },

    #[error("image too small: {0}")]
    ImageTooSmall(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss {loss:.4e} exceeds 10x the initial {initial:.4e}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    #[error("pose keeps only {0:.1}% of pixels valid")]
    LowOverlap(f64),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
