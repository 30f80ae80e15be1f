//! Benchmark runner and reports.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curve::{cumulative_curve, CumulativeCurve};
use crate::align::{align_coarse_to_fine, LmConfig};
use crate::error::{Error, Result};
use crate::geometry::{rotation_error, translation_error, SE3Pose};
use crate::init::{corr_pose_init, CorrInitConfig};
use crate::synth::{LoadedPair, Manifest, PairRecord};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const REPORT_JSON: &str = "report.json";
pub const TRIALS_CSV: &str = "trials.csv";
pub const CURVES_CSV: &str = "curves.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Identity,
    Corr,
}

impl std::str::FromStr for InitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(InitMode::Identity),
            "corr" => Ok(InitMode::Corr),
            other => Err(Error::Config(format!("unknown init mode {other:?}"))),
        }
    }
}

/// Benchmark settings, read from TOML:
///
/// ```text
/// init = "corr"
/// t_max = 0.5
/// r_max_deg = 0.5
/// [lm]
/// levels = [1, 2, 3, 4]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub init: InitMode,
    /// Upper end of the translation curve, scene units.
    pub t_max: f64,
    /// Upper end of the rotation curve, degrees.
    pub r_max_deg: f64,
    pub lm: LmConfig,
    pub corr: CorrInitConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig { init: InitMode::Identity, t_max: 0.5, r_max_deg: 0.5, lm: LmConfig::default(), corr: CorrInitConfig::default() }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.lm.validate()?;
        self.corr.validate()?;
        if !(self.t_max.is_finite() && self.t_max > 0.0 && self.r_max_deg.is_finite() && self.r_max_deg > 0.0) {
            return Err(Error::Config("curve maxima must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: BenchmarkConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Outcome of aligning one pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub pair_id: String,
    pub class: String,
    #[serde(with = "crate::geometry::pose_io::serde_pose")]
    pub init_pose: SE3Pose,
    #[serde(with = "crate::geometry::pose_io::serde_pose")]
    pub estimated_pose: SE3Pose,
    #[serde(with = "crate::geometry::pose_io::serde_pose")]
    pub gt_pose: SE3Pose,
    /// Translation error, scene units; absent when the pair could not be run.
    pub t_err: Option<f64>,
    /// Rotation error, degrees.
    pub r_err_deg: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub failure: Option<String>,
    /// Set when the pair could not be loaded or aligned at all.
    pub hard_failure: bool,
    /// Not serialized, so reports of identical runs are identical.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl TrialRecord {
    /// Errors counted by the curves: infinite unless the trial converged.
    pub fn curve_errors(&self) -> (f64, f64) {
        match (self.converged, self.t_err, self.r_err_deg) {
            (true, Some(t), Some(r)) => (t, r),
            _ => (f64::INFINITY, f64::INFINITY),
        }
    }

    fn failed(pair_id: &str, class: &str, gt: Option<SE3Pose>, reason: String, started: Instant) -> Self {
        TrialRecord {
            pair_id: pair_id.to_owned(),
            class: class.to_owned(),
            init_pose: SE3Pose::identity(),
            estimated_pose: SE3Pose::identity(),
            gt_pose: gt.unwrap_or_else(SE3Pose::identity),
            t_err: None,
            r_err_deg: None,
            converged: false,
            iterations: 0,
            failure: Some(reason),
            hard_failure: true,
            wall_time_s: started.elapsed().as_secs_f64(),
        }
    }
}

/// Seeds and aligns one pair.
pub fn run_trial(pair: &LoadedPair, config: &BenchmarkConfig) -> TrialRecord {
    let started = Instant::now();
    let init = match config.init {
        InitMode::Identity => SE3Pose::identity(),
        InitMode::Corr => corr_pose_init(&pair.reference, &pair.target, &pair.points, &pair.intrinsics, &config.lm, &config.corr),
    };
    let class = pair.class.as_str();
    match align_coarse_to_fine(&pair.reference, &pair.target, &pair.points, &init, &pair.intrinsics, &config.lm) {
        Ok(result) => TrialRecord {
            pair_id: pair.id.clone(),
            class: class.to_owned(),
            init_pose: init,
            estimated_pose: result.pose,
            gt_pose: pair.gt_pose,
            t_err: Some(translation_error(result.pose.translation(), pair.gt_pose.translation())),
            r_err_deg: Some(rotation_error(result.pose.rotation(), pair.gt_pose.rotation())),
            converged: result.converged,
            iterations: result.total_iterations(),
            failure: result.failure,
            hard_failure: false,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
        Err(e) => TrialRecord { init_pose: init, ..TrialRecord::failed(&pair.id, class, Some(pair.gt_pose), e.to_string(), started) },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    /// A magnitude class, or `all`.
    pub class: String,
    pub trials: usize,
    pub converged: usize,
    pub hard_failures: usize,
    pub t_auc: f64,
    pub r_auc: f64,
    pub t_curve: CumulativeCurve,
    pub r_curve: CumulativeCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub config: BenchmarkConfig,
    pub trials: Vec<TrialRecord>,
    /// `all` first, then classes in order of first appearance.
    pub summaries: Vec<ClassSummary>,
}

fn summarize(class: &str, trials: &[&TrialRecord], config: &BenchmarkConfig) -> Result<ClassSummary> {
    let (t, r): (Vec<f64>, Vec<f64>) = trials.iter().map(|t| t.curve_errors()).unzip();
    let t_curve = cumulative_curve(&t, config.t_max)?;
    let r_curve = cumulative_curve(&r, config.r_max_deg)?;
    Ok(ClassSummary {
        class: class.to_owned(),
        trials: trials.len(),
        converged: trials.iter().filter(|t| t.converged).count(),
        hard_failures: trials.iter().filter(|t| t.hard_failure).count(),
        t_auc: t_curve.auc(),
        r_auc: r_curve.auc(),
        t_curve,
        r_curve,
    })
}

impl BenchmarkReport {
    pub fn from_trials(trials: Vec<TrialRecord>, config: &BenchmarkConfig) -> Result<Self> {
        let mut classes: Vec<&str> = Vec::new();
        for t in &trials {
            if !classes.contains(&t.class.as_str()) {
                classes.push(&t.class);
            }
        }
        let mut summaries = vec![summarize("all", &trials.iter().collect::<Vec<_>>(), config)?];
        for c in classes {
            let subset: Vec<&TrialRecord> = trials.iter().filter(|t| t.class == c).collect();
            summaries.push(summarize(c, &subset, config)?);
        }
        Ok(BenchmarkReport { schema_version: REPORT_SCHEMA_VERSION, config: config.clone(), trials, summaries })
    }

    pub fn summary(&self, class: &str) -> Option<&ClassSummary> {
        self.summaries.iter().find(|s| s.class == class)
    }

    pub fn hard_failures(&self) -> usize {
        self.trials.iter().filter(|t| t.hard_failure).count()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(format!("report serialization: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: BenchmarkReport = serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "{}: report schema {} is not supported (expected {REPORT_SCHEMA_VERSION})",
                path.display(),
                r.schema_version
            )));
        }
        Ok(r)
    }

    /// One row per trial:
    /// `pair_id,class,converged,hard_failure,iterations,t_err,r_err_deg,failure`.
    /// Missing errors are empty fields.
    pub fn trials_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
        w.write_record(["pair_id", "class", "converged", "hard_failure", "iterations", "t_err", "r_err_deg", "failure"])
            .map_err(csv_err)?;
        let num = |x: Option<f64>| x.map(|v| format!("{v:.9e}")).unwrap_or_default();
        for t in &self.trials {
            w.write_record([
                t.pair_id.clone(),
                t.class.clone(),
                t.converged.to_string(),
                t.hard_failure.to_string(),
                t.iterations.to_string(),
                num(t.t_err),
                num(t.r_err_deg),
                t.failure.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?).map_err(|e| Error::Format(e.to_string()))
    }

    /// One row per class and grid index:
    /// `class,k,t_threshold,t_fraction,r_threshold_deg,r_fraction`.
    pub fn curves_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
        w.write_record(["class", "k", "t_threshold", "t_fraction", "r_threshold_deg", "r_fraction"]).map_err(csv_err)?;
        for s in &self.summaries {
            for k in 0..s.t_curve.thresholds.len() {
                w.write_record([
                    s.class.clone(),
                    k.to_string(),
                    format!("{:.9e}", s.t_curve.thresholds[k]),
                    format!("{:.9e}", s.t_curve.fractions[k]),
                    format!("{:.9e}", s.r_curve.thresholds[k]),
                    format!("{:.9e}", s.r_curve.fractions[k]),
                ])
                .map_err(csv_err)?;
            }
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes the JSON report and both CSV files into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [(REPORT_JSON, self.to_json()? + "\n"), (TRIALS_CSV, self.trials_csv()?), (CURVES_CSV, self.curves_csv()?)] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Runs every pair in parallel; results keep the input order.
pub fn run_benchmark_pairs(pairs: &[LoadedPair], config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let trials: Vec<TrialRecord> = pairs.par_iter().map(|p| run_trial(p, config)).collect();
    BenchmarkReport::from_trials(trials, config)
}

/// Loads and runs every pair of a manifest. Pairs that fail to load are
/// recorded as hard failures and the run continues.
pub fn run_benchmark(manifest: &Manifest, root: impl AsRef<Path>, config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    if manifest.pairs.is_empty() {
        return Err(Error::EmptyInput("manifest pairs"));
    }
    let root = root.as_ref();
    let run = |record: &PairRecord| {
        let started = Instant::now();
        match record.load(root) {
            Ok(pair) => run_trial(&pair, config),
            Err(e) => {
                log::warn!("{}: {e}", record.id);
                TrialRecord::failed(&record.id, record.class.as_str(), None, e.to_string(), started)
            }
        }
    };
    let trials: Vec<TrialRecord> = manifest.pairs.par_iter().map(run).collect();
    BenchmarkReport::from_trials(trials, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_dataset, DatasetConfig, MagnitudeClass, SceneConfig};

    fn small_dataset(classes: Vec<MagnitudeClass>, pairs_per_class: usize) -> DatasetConfig {
        DatasetConfig {
            pairs_per_class,
            classes,
            num_points: 100,
            scene: SceneConfig { width: 96, height: 64, focal: 90.0, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn identity_pairs_score_full_marks() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = build_dataset(&small_dataset(vec![MagnitudeClass::Zero], 3), dir.path()).unwrap();
        let report = run_benchmark(&manifest, dir.path(), &BenchmarkConfig::default()).unwrap();
        let all = report.summary("all").unwrap();
        assert_eq!((all.trials, all.converged, all.hard_failures), (3, 3, 0));
        assert_eq!(all.t_auc, 100.0);
        assert_eq!(all.r_auc, 100.0);
        assert_eq!(report.summaries.len(), 2);
        assert_eq!(report.summaries[1].class, "zero");
    }

    #[test]
    fn repeated_runs_are_identical_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = build_dataset(&small_dataset(vec![MagnitudeClass::Small, MagnitudeClass::Medium], 2), dir.path()).unwrap();
        let cfg = BenchmarkConfig { init: InitMode::Corr, ..Default::default() };
        let a = run_benchmark(&manifest, dir.path(), &cfg).unwrap();
        let b = run_benchmark(&manifest, dir.path(), &cfg).unwrap();
        assert_eq!(a.trials_csv().unwrap(), b.trials_csv().unwrap());
        assert_eq!(a.curves_csv().unwrap(), b.curves_csv().unwrap());
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());

        let out = dir.path().join("report");
        a.write(&out).unwrap();
        let back = BenchmarkReport::load(out.join(REPORT_JSON)).unwrap();
        assert_eq!(back.to_json().unwrap(), a.to_json().unwrap());
        let csv = std::fs::read_to_string(out.join(TRIALS_CSV)).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4);
        assert!(csv.starts_with("pair_id,class,converged,hard_failure,iterations,t_err,r_err_deg,failure\n"));
        let curves = std::fs::read_to_string(out.join(CURVES_CSV)).unwrap();
        assert_eq!(curves.lines().count(), 1 + 3 * 501);
    }

    #[test]
    fn missing_files_are_recorded_and_the_run_continues() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = build_dataset(&small_dataset(vec![MagnitudeClass::Small], 3), dir.path()).unwrap();
        std::fs::remove_file(dir.path().join(&manifest.pairs[1].target)).unwrap();
        let report = run_benchmark(&manifest, dir.path(), &BenchmarkConfig::default()).unwrap();
        assert_eq!(report.hard_failures(), 1);
        let failed = &report.trials[1];
        assert!(failed.hard_failure && failed.t_err.is_none() && failed.failure.is_some());
        assert_eq!(failed.curve_errors().0, f64::INFINITY);
        assert!(report.trials[0].converged && report.trials[2].converged);
    }

    #[test]
    fn config_parsing() {
        let cfg = BenchmarkConfig::from_toml_str("init = \"corr\"\nt_max = 0.2\n[lm]\nlevels = [4]\n").unwrap();
        assert_eq!(cfg.init, InitMode::Corr);
        assert_eq!(cfg.lm.levels, vec![4]);
        assert!(BenchmarkConfig::from_toml_str("t_max = 0").is_err());
        assert!(BenchmarkConfig::from_toml_str("bogus = 1").is_err());
        assert_eq!("Identity".parse::<InitMode>().unwrap(), InitMode::Identity);
        assert!("x".parse::<InitMode>().is_err());
    }
}
