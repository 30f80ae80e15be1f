use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use featalign::align::{align_coarse_to_fine, read_points_file, DampingMode, LmConfig};
use featalign::error::{Error, Result};
use featalign::eval::{compare_reports, run_benchmark, BenchmarkConfig, BenchmarkReport, InitMode};
use featalign::features::load_feature_pyramid;
use featalign::geometry::{format_pose, read_pose_file, warp_point, write_pose_file, SE3Pose};
use featalign::init::{corr_pose_init_detailed, CorrInitConfig};
use featalign::losses::{make_toy_pairs, sample_batch, total_loss, train_toy_features, LossConfig, ToyConfig};
use featalign::synth::{build_dataset, DatasetConfig, Manifest};

/// Feature-metric direct image alignment on SE(3).
#[derive(Parser)]
#[command(name = "featalign", version)]
struct Cli {
    /// Seed for every random draw of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic benchmark dataset.
    Synth {
        /// Dataset TOML; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align a single pair and print the estimated pose.
    Align {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long, default_value = "identity")]
        init: InitMode,
        #[arg(long)]
        damping: Option<DampingMode>,
        /// Print the per-iteration trace as JSON to stderr.
        #[arg(long)]
        trace: bool,
        /// Solver TOML.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the pose to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Loss breakdown of a pair at its ground-truth correspondences.
    EvalLoss {
        #[command(flatten)]
        pair: PairArgs,
        /// Ground-truth pose file.
        #[arg(long)]
        gt_pose: PathBuf,
        #[arg(long, default_value_t = 4)]
        level: usize,
        /// Loss TOML.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train toy features and report alignment success per evaluation.
    TrainToy {
        /// Toy training TOML.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        no_gd: bool,
        #[arg(long)]
        no_gn: bool,
        #[arg(long)]
        no_neg: bool,
        /// Write the trace and final filters as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Align every pair of a manifest and write reports.
    Benchmark {
        #[arg(long)]
        manifest: PathBuf,
        /// Benchmark TOML.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the init mode of the config.
        #[arg(long)]
        init: Option<InitMode>,
        /// Output directory for report.json, trials.csv and curves.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Metric deltas between two benchmark reports (second minus first).
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write the deltas as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PairArgs {
    /// Reference feature pyramid (FMAP).
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Target feature pyramid (FMAP).
    #[arg(long)]
    target: PathBuf,
    /// Reference points with depth and intrinsics.
    #[arg(long)]
    points: PathBuf,
}

fn load_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Returns the process exit code on success.
fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Synth { config, out } => {
            let mut cfg = match config {
                Some(p) => DatasetConfig::from_file(p)?,
                None => DatasetConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let manifest = build_dataset(&cfg, &out)?;
            println!("wrote {} pairs to {}", manifest.pairs.len(), out.display());
            Ok(0)
        }
        Command::Align { pair, init, damping, trace, config, out } => {
            let mut lm = match config {
                Some(p) => LmConfig::from_file(&p)?,
                None => LmConfig::default(),
            };
            if let Some(d) = damping {
                lm.damping_mode = d;
            }
            lm.trace |= trace;
            lm.validate()?;
            let reference = load_feature_pyramid(&pair.reference)?;
            let target = load_feature_pyramid(&pair.target)?;
            let (points, k) = read_points_file(&pair.points)?;
            let start = match init {
                InitMode::Identity => SE3Pose::identity(),
                InitMode::Corr => {
                    let seed = corr_pose_init_detailed(&reference, &target, &points, &k, &lm, &CorrInitConfig::default());
                    if let Some(reason) = &seed.fallback {
                        log::warn!("correlation seed unavailable: {reason}");
                    }
                    seed.pose
                }
            };
            let result = align_coarse_to_fine(&reference, &target, &points, &start, &k, &lm)?;
            if trace {
                eprintln!("{}", to_json(&result.levels)?);
            }
            if let Some(f) = &result.failure {
                log::warn!("{f}");
            }
            if let Some(path) = out {
                write_pose_file(&path, &result.pose)?;
            }
            println!("{}", format_pose(&result.pose));
            Ok(0)
        }
        Command::EvalLoss { pair, gt_pose, level, config } => {
            let cfg: LossConfig = load_toml(config.as_deref())?;
            cfg.validate()?;
            if !(1..=featalign::geometry::NUM_LEVELS).contains(&level) {
                return Err(Error::Config(format!("level {level} is not in 1..=4")));
            }
            let reference = load_feature_pyramid(&pair.reference)?;
            let target = load_feature_pyramid(&pair.target)?;
            let (points, k) = read_points_file(&pair.points)?;
            let gt = read_pose_file(&gt_pose)?;
            let kl = k.at_level(level);
            let mut corr = Vec::with_capacity(points.len());
            for p in points.iter().map(|p| p.at_level(level)) {
                let w = warp_point(&p.pixel, p.depth, &gt, &kl, &kl)?;
                if w.valid {
                    corr.push((p.pixel, w.pixel));
                }
            }
            let (f, fp) = (reference.level(level), target.level(level));
            let batch = sample_batch(cli.seed.unwrap_or(0), &corr, f.width(), f.height(), &cfg)?;
            let breakdown = total_loss(f, fp, &batch, &cfg)?;
            println!("{}", to_json(&breakdown)?);
            Ok(0)
        }
        Command::TrainToy { config, no_gd, no_gn, no_neg, out } => {
            let mut cfg = match config {
                Some(p) => ToyConfig::from_file(p)?,
                None => ToyConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let w = &mut cfg.loss.weights;
            if no_gd {
                w.gd = 0.0;
            }
            if no_gn {
                w.gn = 0.0;
            }
            if no_neg {
                w.neg = 0.0;
            }
            let pairs = make_toy_pairs(&cfg)?;
            let result = train_toy_features(&pairs, &cfg)?;
            for rec in &result.trace {
                if let Some(s) = rec.score {
                    println!(
                        "epoch {:>4}  loss {:>10.5}  success {:.3}  mean t_err {}",
                        rec.epoch,
                        rec.loss.total,
                        s.success_rate,
                        s.mean_success_error.map_or("-".into(), |e| format!("{e:.4e}"))
                    );
                }
            }
            if let Some(path) = out {
                let doc = serde_json::json!({ "config": cfg, "trace": result.trace, "bank": result.bank, "diverged": result.diverged });
                write_text(&path, &(to_json(&doc)? + "\n"))?;
            }
            if let Some(d) = result.diverged {
                return Err(Error::Diverged { epoch: d.epoch, loss: d.loss, initial: d.initial });
            }
            Ok(0)
        }
        Command::Benchmark { manifest, config, init, out } => {
            let mut cfg = match config {
                Some(p) => BenchmarkConfig::from_file(p)?,
                None => BenchmarkConfig::default(),
            };
            if let Some(i) = init {
                cfg.init = i;
            }
            let m = Manifest::load(&manifest)?;
            let root = manifest.parent().unwrap_or(Path::new("."));
            let report = run_benchmark(&m, root, &cfg)?;
            report.write(&out)?;
            for s in &report.summaries {
                println!(
                    "{:<8} trials {:>5}  converged {:>5}  failed {:>3}  t_AUC {:>7.3}  R_AUC {:>7.3}",
                    s.class, s.trials, s.converged, s.hard_failures, s.t_auc, s.r_auc
                );
            }
            Ok(if report.hard_failures() > 0 { 2 } else { 0 })
        }
        Command::Compare { a, b, out } => {
            let ra = BenchmarkReport::load(&a)?;
            let rb = BenchmarkReport::load(&b)?;
            let cmp = compare_reports(&ra, &rb)?;
            print!("{}", cmp.to_table());
            if let Some(path) = out {
                write_text(&path, &(to_json(&cmp)? + "\n"))?;
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
