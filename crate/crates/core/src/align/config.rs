use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DampingMode {
    /// `H + lambda I`
    Levenberg,
    /// `H + lambda diag(H)`
    Marquardt,
}

impl std::str::FromStr for DampingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "levenberg" => Ok(DampingMode::Levenberg),
            "marquardt" => Ok(DampingMode::Marquardt),
            other => Err(Error::Config(format!("unknown damping mode {other:?}"))),
        }
    }
}

/// Levenberg-Marquardt settings.
///
/// Read from TOML key-value files, e.g.
///
/// ```text
/// lambda_init = 0.1
/// damping_mode = "marquardt"
/// huber_gamma = 0.3
/// levels = [1, 2, 3, 4]
/// ```
///
/// Missing keys take their default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub lambda_init: f64,
    /// Multiplier applied to lambda after an accepted step.
    pub lambda_success_mult: f64,
    /// Multiplier applied to lambda after a rejected step.
    pub lambda_fail_mult: f64,
    /// Iteration stops once lambda exceeds this.
    pub lambda_max: f64,
    pub damping_mode: DampingMode,
    /// Huber threshold on the per-point residual norm, in feature units.
    pub huber_gamma: f64,
    pub max_iters_per_level: usize,
    pub step_norm_eps: f64,
    pub min_valid_points: usize,
    /// Steps whose linear system has a larger condition number are rejected.
    pub max_condition: f64,
    /// Pyramid levels visited, coarse to fine.
    pub levels: Vec<usize>,
    /// Energy charged for each point that leaves the target view, so that a
    /// step cannot lower the energy just by pushing points out of the image.
    /// Expressed as a residual norm; 0 disables it.
    pub out_of_view_residual: f64,
    /// Evaluate per-point terms on the rayon pool. Reduction order is fixed
    /// either way, so results are bit-identical.
    pub parallel: bool,
    /// Record a per-iteration trace.
    pub trace: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            lambda_init: 0.1,
            lambda_success_mult: 0.5,
            lambda_fail_mult: 4.0,
            lambda_max: 1e8,
            damping_mode: DampingMode::Marquardt,
            huber_gamma: 0.3,
            max_iters_per_level: 50,
            step_norm_eps: 1e-7,
            min_valid_points: 8,
            max_condition: 1e12,
            levels: vec![1, 2, 3, 4],
            out_of_view_residual: 0.0,
            parallel: false,
            trace: false,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_success_mult", self.lambda_success_mult),
            ("lambda_fail_mult", self.lambda_fail_mult),
            ("lambda_max", self.lambda_max),
            ("huber_gamma", self.huber_gamma),
            ("max_condition", self.max_condition),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda_init >= 0.0) || !(self.step_norm_eps >= 0.0) || !(self.out_of_view_residual >= 0.0) {
            return Err(Error::Config("lambda_init, step_norm_eps and out_of_view_residual must be non-negative".into()));
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !(1..=4).contains(l)) {
            return Err(Error::Config(format!("levels must be a non-empty subset of 1..=4, got {:?}", self.levels)));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("levels must be strictly increasing (coarse to fine)".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: LmConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
