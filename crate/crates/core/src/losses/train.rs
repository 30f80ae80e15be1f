//! Toy feature training.
//!
//! Per-pixel D=2 feature maps are produced by a small convolution filter
//! bank shared by both views and trained with Adam on the combined loss. The loss gradient is taken by finite differences over feature-map
//! entries and chained analytically through the (linear) filter bank. Progress
//! is scored by how often single-level alignment recovers the true pose from
//! perturbed starts.

use nalgebra::Vector2;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::batch::{loss_gradient_fd_on, sample_batch, total_loss, LossBreakdown, MapSide, FD_STEP, MAX_FD_ENTRIES};
use super::terms::LossConfig;
use crate::align::{align_level, LmConfig, SparsePoint};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::geometry::{in_interp_domain, translation_error, CameraIntrinsics, SE3Pose, NUM_LEVELS};
use crate::synth::{
    generate_scene, photometric_perturb, sample_pose_perturbation, sample_pose_with_flow, select_sparse_points, warp_scene, FlowProbe,
    MagnitudeClass, PhotometricParams, SceneConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub seed: u64,
    pub num_pairs: usize,
    /// Square image side in pixels; a multiple of 8.
    pub size: usize,
    pub focal: f64,
    /// Independent noise added to both images of a pair.
    pub noise_sigma: f64,
    /// Per-pair appearance change of the target: gain, bias and gamma are
    /// drawn uniformly from these ranges.
    pub gain_range: [f64; 2],
    pub bias_range: [f64; 2],
    pub gamma_range: [f64; 2],
    /// Noise lattice spacings of the scene texture, coarse first.
    pub octave_cells: Vec<f64>,
    /// Scale of the initial filters; intensities span roughly `[0, 1]`.
    pub init_gain: f64,
    /// Filter taps span `2 * kernel_radius + 1` pixels per side.
    pub kernel_radius: usize,
    pub epochs: usize,
    /// Adam step size.
    pub learning_rate: f64,
    /// Correspondences drawn per pair and epoch.
    pub samples_per_pair: usize,
    /// Alignment is scored at epoch 0, every `eval_every` epochs, and at the end.
    pub eval_every: usize,
    pub eval_trials_per_pair: usize,
    /// Mean flow of the evaluation start poses relative to the truth, pixels.
    pub perturbation_px: f64,
    /// Translation error below which an alignment counts as a success.
    pub success_threshold: f64,
    pub num_points: usize,
    /// Abort once the loss exceeds the initial loss by this factor.
    pub divergence_factor: f64,
    pub loss: LossConfig,
    pub lm: LmConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 0,
            num_pairs: 8,
            size: 64,
            focal: 60.0,
            noise_sigma: 0.05,
            gain_range: [1.0, 1.0],
            bias_range: [0.0, 0.0],
            gamma_range: [1.0, 1.0],
            octave_cells: vec![24.0, 12.0, 6.0, 3.0],
            init_gain: 3.0,
            kernel_radius: 3,
            epochs: 60,
            learning_rate: 0.02,
            samples_per_pair: 300,
            eval_every: 15,
            eval_trials_per_pair: 8,
            perturbation_px: 5.0,
            success_threshold: 0.1,
            num_points: 100,
            divergence_factor: 10.0,
            loss: LossConfig::default(),
            lm: LmConfig::default(),
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.lm.validate()?;
        if self.num_pairs < 4 {
            return Err(Error::Config(format!("toy training needs at least 4 pairs, got {}", self.num_pairs)));
        }
        if self.size < 32 || self.size % 8 != 0 {
            return Err(Error::Config(format!("toy image size {} must be a multiple of 8 and at least 32", self.size)));
        }
        let positive = [self.focal, self.perturbation_px, self.success_threshold, self.divergence_factor];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) || self.noise_sigma < 0.0 || self.learning_rate < 0.0 {
            return Err(Error::Config("toy configuration has non-positive scales".into()));
        }
        if self.kernel_radius == 0 || 2 * self.kernel_radius + 1 > self.size / 4 {
            return Err(Error::Config(format!("kernel radius {} does not fit a {} px image", self.kernel_radius, self.size)));
        }
        if self.samples_per_pair == 0 || self.eval_every == 0 {
            return Err(Error::Config("samples_per_pair and eval_every must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ToyConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn scene(&self) -> SceneConfig {
        SceneConfig {
            width: self.size,
            height: self.size,
            focal: self.focal,
            octave_cells: self.octave_cells.clone(),
            ..Default::default()
        }
    }
}

/// Linear 2-D filters, one per output channel, plus a bias. Borders are
/// handled by clamping to the nearest pixel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub radius: usize,
    pub channels: usize,
    /// `[channel][dy][dx]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FilterBank {
    /// Channel 0 passes intensity through; the others start as small random
    /// filters.
    pub fn initial(radius: usize, channels: usize, gain: f64, seed: u64) -> Self {
        let k = 2 * radius + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, gain / k as f64).expect("valid sigma");
        let mut weights = vec![0.0; channels * k * k];
        weights[radius * k + radius] = gain;
        for w in weights.iter_mut().skip(k * k) {
            *w = normal.sample(&mut rng);
        }
        FilterBank { radius, channels, weights, bias: vec![0.0; channels] }
    }

    fn taps(&self) -> usize {
        (2 * self.radius + 1).pow(2)
    }

    /// Flat parameters: weights then biases.
    pub fn params(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.bias).copied().collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let n = self.weights.len();
        self.weights.copy_from_slice(&p[..n]);
        self.bias.copy_from_slice(&p[n..]);
    }

    fn patch_value(image: &FeatureMap, c: usize, r: usize, dx: isize, dy: isize) -> f64 {
        let cc = (c as isize + dx).clamp(0, image.width() as isize - 1) as usize;
        let rr = (r as isize + dy).clamp(0, image.height() as isize - 1) as usize;
        image.get(cc, rr, 0)
    }

    pub fn apply(&self, image: &FeatureMap) -> FeatureMap {
        let rad = self.radius as isize;
        let k = 2 * self.radius + 1;
        FeatureMap::from_fn(image.width(), image.height(), self.channels, |c, r, ch| {
            let w = &self.weights[ch * k * k..(ch + 1) * k * k];
            let mut acc = self.bias[ch];
            for dy in -rad..=rad {
                for dx in -rad..=rad {
                    acc += w[((dy + rad) as usize) * k + (dx + rad) as usize] * Self::patch_value(image, c, r, dx, dy);
                }
            }
            acc
        })
    }

    /// Accumulates into `out` (laid out like [`params`](Self::params)) the
    /// parameter gradient given the loss gradient over the entries of
    /// `apply(image)`.
    pub fn backprop(&self, image: &FeatureMap, map_grad: &[f64], out: &mut [f64]) {
        let rad = self.radius as isize;
        let k = 2 * self.radius + 1;
        let taps = self.taps();
        let bias_at = self.weights.len();
        for (i, g) in map_grad.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            let ch = i % self.channels;
            let px = i / self.channels;
            let (c, r) = (px % image.width(), px / image.width());
            out[bias_at + ch] += g;
            for dy in -rad..=rad {
                for dx in -rad..=rad {
                    let t = ((dy + rad) as usize) * k + (dx + rad) as usize;
                    out[ch * taps + t] += g * Self::patch_value(image, c, r, dx, dy);
                }
            }
        }
    }
}

/// One training pair at a single resolution.
#[derive(Clone, Debug)]
pub struct ToyPair {
    /// Noisy reference intensity image.
    pub reference: FeatureMap,
    /// Noisy target intensity image.
    pub target: FeatureMap,
    /// `(p, p'_gt)` for every usable reference pixel.
    pub correspondences: Vec<(Vector2<f64>, Vector2<f64>)>,
    pub points: Vec<SparsePoint>,
    pub intrinsics: CameraIntrinsics,
    pub gt_pose: SE3Pose,
    /// Start poses for scoring, `perturbation_px` away from the truth.
    pub eval_inits: Vec<SE3Pose>,
}

pub fn make_toy_pairs(config: &ToyConfig) -> Result<Vec<ToyPair>> {
    config.validate()?;
    let scene_cfg = config.scene();
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pairs = Vec::with_capacity(config.num_pairs);
    while pairs.len() < config.num_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let scene = generate_scene(rng.next_u64(), &scene_cfg)?;
        if scene.check_texture(&scene_cfg).is_err() {
            continue;
        }
        let k = scene.intrinsics;
        let probe = FlowProbe::from_scene(&scene, 4);
        let gt_pose = sample_pose_perturbation(&mut rng, MagnitudeClass::Small, &probe);
        let warp = match warp_scene(&scene, &gt_pose) {
            Ok(w) => w,
            Err(Error::LowOverlap(_)) => continue,
            Err(e) => return Err(e),
        };
        let noise = PhotometricParams { noise_sigma: config.noise_sigma, ..Default::default() };
        let draw = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[0] < r[1] { rng.random_range(r[0]..r[1]) } else { r[0] };
        let appearance = PhotometricParams {
            gain: draw(&mut rng, config.gain_range),
            bias: draw(&mut rng, config.bias_range),
            gamma: draw(&mut rng, config.gamma_range),
            noise_sigma: config.noise_sigma,
        };
        let reference = photometric_perturb(&warp.reference, &noise, rng.next_u64())?;
        let target = photometric_perturb(&warp.target, &appearance, rng.next_u64())?;

        let n = config.size;
        let usable: Vec<bool> = (0..n * n).map(|i| warp.mask[i] && in_interp_domain(&warp.correspondences[i], n, n)).collect();
        let correspondences =
            (0..n * n).filter(|&i| usable[i]).map(|i| (Vector2::new((i % n) as f64, (i / n) as f64), warp.correspondences[i])).collect();
        let points = select_sparse_points(&warp.reference, &scene.depth, config.num_points, &mut rng, Some(&usable), 2)?.points;
        if points.len() < config.lm.min_valid_points {
            continue;
        }
        let seen = FlowProbe::from_points(&points, &k)?.transformed(&gt_pose)?;
        let px = config.perturbation_px;
        let eval_inits =
            (0..config.eval_trials_per_pair).map(|_| sample_pose_with_flow(&mut rng, 0.9 * px, 1.1 * px, &seen) * gt_pose).collect();
        pairs.push(ToyPair { reference, target, correspondences, points, intrinsics: k, gt_pose, eval_inits });
    }
    Ok(pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    /// Fraction of trials with translation error below the threshold.
    pub success_rate: f64,
    /// Mean translation error over the successful trials.
    pub mean_success_error: Option<f64>,
    pub trials: usize,
}

/// Aligns every evaluation start of every pair on the features of `bank`.
pub fn score_alignment(pairs: &[ToyPair], bank: &FilterBank, config: &ToyConfig) -> Result<AlignmentScore> {
    let mut errors = Vec::new();
    let mut trials = 0;
    for pair in pairs {
        let (f, fp) = (bank.apply(&pair.reference), bank.apply(&pair.target));
        for init in &pair.eval_inits {
            trials += 1;
            let (pose, _) = align_level(&f, &fp, &pair.points, init, &pair.intrinsics, &config.lm, NUM_LEVELS)?;
            let err = translation_error(pose.translation(), pair.gt_pose.translation());
            if err < config.success_threshold {
                errors.push(err);
            }
        }
    }
    if trials == 0 {
        return Err(Error::EmptyInput("evaluation trials"));
    }
    Ok(AlignmentScore {
        success_rate: errors.len() as f64 / trials as f64,
        mean_success_error: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        trials,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss terms averaged over pairs, before this epoch's update.
    pub loss: LossBreakdown,
    pub score: Option<AlignmentScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    pub loss: f64,
    pub initial: f64,
}

#[derive(Clone, Debug)]
pub struct ToyTrainingResult {
    pub bank: FilterBank,
    /// Target features `F'` of every pair under the final bank.
    pub features: Vec<FeatureMap>,
    pub trace: Vec<EpochRecord>,
    /// Set when training stopped early on a diverging loss.
    pub diverged: Option<Divergence>,
}

impl ToyTrainingResult {
    /// The last recorded alignment score.
    pub fn final_score(&self) -> Option<AlignmentScore> {
        self.trace.iter().rev().find_map(|r| r.score)
    }
}

/// Adam moments for one flat parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn epoch_seed(seed: u64, epoch: usize, pair: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7a1e);
    rng.set_stream(((epoch as u64) << 20) | pair as u64);
    rng.next_u64()
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len() as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / n;
    LossBreakdown { pos: sum(|b| b.pos), neg: sum(|b| b.neg), gd: sum(|b| b.gd), gn: sum(|b| b.gn), total: sum(|b| b.total) }
}

/// Trains the filter bank on all pairs jointly.
///
/// The loss can be negative (the log-determinant of the GN term), so
/// divergence is measured as growth beyond the initial value:
/// `loss - initial > (factor - 1) |initial|`.
pub fn train_toy_features(pairs: &[ToyPair], config: &ToyConfig) -> Result<ToyTrainingResult> {
    config.validate()?;
    if pairs.len() < 4 {
        return Err(Error::Config(format!("toy training needs at least 4 pairs, got {}", pairs.len())));
    }
    let mut bank = FilterBank::initial(config.kernel_radius, 2, config.init_gain, config.seed);
    let mut params = bank.params();
    let mut optim = Adam::new(params.len());
    let mut trace = Vec::with_capacity(config.epochs + 1);
    let mut initial = None;
    let mut diverged = None;

    for epoch in 0..=config.epochs {
        let maps: Vec<(FeatureMap, FeatureMap)> = pairs.iter().map(|p| (bank.apply(&p.reference), bank.apply(&p.target))).collect();
        let mut batches = Vec::with_capacity(pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            let seed = epoch_seed(config.seed, epoch, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let total = pair.correspondences.len();
            let take = config.samples_per_pair.min(total);
            let mut picked: Vec<usize> = sample_indices(&mut rng, total, take).into_vec();
            picked.sort_unstable();
            let subset: Vec<_> = picked.iter().map(|&j| pair.correspondences[j]).collect();
            batches.push(sample_batch(rng.next_u64(), &subset, config.size, config.size, &config.loss)?);
        }
        let parts = maps.iter().zip(&batches).map(|((f, fp), b)| total_loss(f, fp, b, &config.loss)).collect::<Result<Vec<_>>>()?;
        let loss = mean_breakdown(&parts);
        let last = epoch == config.epochs;
        let score = if epoch % config.eval_every == 0 || last { Some(score_alignment(pairs, &bank, config)?) } else { None };
        log::debug!("epoch {epoch}: loss {:.6} score {:?}", loss.total, score);
        trace.push(EpochRecord { epoch, loss, score });

        let init = *initial.get_or_insert(loss.total);
        if !loss.total.is_finite() || loss.total - init > (config.divergence_factor - 1.0) * init.abs() {
            if trace.last().unwrap().score.is_none() {
                trace.last_mut().unwrap().score = Some(score_alignment(pairs, &bank, config)?);
            }
            diverged = Some(Divergence { epoch, loss: loss.total, initial: init });
            break;
        }
        if last {
            break;
        }
        if config.learning_rate == 0.0 {
            continue;
        }
        let mut grad = vec![0.0; params.len()];
        for ((pair, (f, fp)), batch) in pairs.iter().zip(&maps).zip(&batches) {
            for (side, image) in [(MapSide::Reference, &pair.reference), (MapSide::Target, &pair.target)] {
                let n = f.data().len();
                let mut map_grad = Vec::with_capacity(n);
                let all: Vec<usize> = (0..n).collect();
                for chunk in all.chunks(MAX_FD_ENTRIES) {
                    map_grad.extend(loss_gradient_fd_on(side, f, fp, batch, &config.loss, chunk, FD_STEP)?);
                }
                bank.backprop(image, &map_grad, &mut grad);
            }
        }
        let scale = 1.0 / pairs.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        optim.step(&mut params, &grad, config.learning_rate);
        bank.set_params(&params);
    }
    let features = pairs.iter().map(|p| bank.apply(&p.target)).collect();
    Ok(ToyTrainingResult { bank, features, trace, diverged })
}
