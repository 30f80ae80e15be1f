//! Benchmark pairs and on-disk datasets.

use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::perturb::{photometric_perturb, sample_pose_perturbation, select_sparse_points, FlowProbe, MagnitudeClass, PhotometricParams};
use super::scene::{generate_scene, SceneConfig};
use super::warp::{pullback_pyramid, warp_scene, WarpedPair};
use crate::align::{read_points_file, write_points_file, SparsePoint};
use crate::error::{Error, Result};
use crate::features::{build_baseline_pyramid, load_feature_pyramid, save_feature_pyramid, BaselineConfig, FeaturePyramid};
use crate::geometry::{format_pose, in_interp_domain, parse_pose, CameraIntrinsics, SE3Pose};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Border kept clear of sparse points, in full-resolution pixels.
pub const POINT_MARGIN: usize = 8;

const MAX_POSE_ATTEMPTS: usize = 100;
const WRITE_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Master seed; per-pair seeds are drawn from it in order.
    pub seed: u64,
    pub pairs_per_class: usize,
    pub classes: Vec<MagnitudeClass>,
    /// Every class gets `pairs_per_class` pairs under each setting.
    pub photometric: Vec<PhotometricParams>,
    pub num_points: usize,
    pub scene: SceneConfig,
    pub features: BaselineConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            pairs_per_class: 10,
            classes: vec![MagnitudeClass::Small, MagnitudeClass::Medium, MagnitudeClass::Large],
            photometric: vec![PhotometricParams::default()],
            num_points: 300,
            scene: SceneConfig::default(),
            features: BaselineConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: DatasetConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.scene.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("dataset config serializes")
    }

    /// What to generate, in manifest order.
    pub fn pair_specs(&self) -> Vec<PairSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut specs = Vec::new();
        for &class in &self.classes {
            for photometric in &self.photometric {
                for _ in 0..self.pairs_per_class {
                    let id = format!("pair_{:05}", specs.len());
                    specs.push(PairSpec { id, seed: rng.next_u64(), class, photometric: *photometric });
                }
            }
        }
        specs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub id: String,
    pub seed: u64,
    pub class: MagnitudeClass,
    pub photometric: PhotometricParams,
}

#[derive(Clone, Debug)]
pub struct BenchmarkPair {
    pub id: String,
    pub seed: u64,
    pub class: MagnitudeClass,
    pub photometric: PhotometricParams,
    pub reference: FeaturePyramid,
    pub target: FeaturePyramid,
    /// Full-resolution reference points with depth.
    pub points: Vec<SparsePoint>,
    /// Reference-to-target pose.
    pub gt_pose: SE3Pose,
    pub intrinsics: CameraIntrinsics,
    /// Dense full-resolution correspondence field and its validity.
    pub warp: WarpedPair,
    /// Set when fewer than the requested points qualified.
    pub point_warning: Option<String>,
}

/// Generates one pair; deterministic in `spec`.
///
/// The target pyramid is built from the (optionally photometrically
/// perturbed) scene texture; the reference pyramid is the clean target
/// pyramid pulled back through the ground-truth warp, so that at full
/// resolution and without perturbation the residual at the true pose
/// vanishes. Points are restricted to pixels visible in the target.
pub fn generate_pair(spec: &PairSpec, dataset: &DatasetConfig) -> Result<BenchmarkPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scene = generate_scene(rng.next_u64(), &dataset.scene)?;
    scene.check_texture(&dataset.scene)?;
    let k = scene.intrinsics;
    let probe = FlowProbe::from_scene(&scene, 8);

    let mut attempt = 0;
    let (gt_pose, warp) = loop {
        let pose = sample_pose_perturbation(&mut rng, spec.class, &probe);
        match warp_scene(&scene, &pose) {
            Ok(w) => break (pose, w),
            Err(Error::LowOverlap(_)) if attempt + 1 < MAX_POSE_ATTEMPTS => attempt += 1,
            Err(e) => return Err(e),
        }
    };

    let clean = build_baseline_pyramid(&warp.target, &dataset.features)?;
    let reference = pullback_pyramid(&clean, &scene.depth, &gt_pose, &k)?;
    let photo_seed = rng.next_u64();
    let target = if spec.photometric.is_identity() {
        clean
    } else {
        let image = photometric_perturb(&warp.target, &spec.photometric, photo_seed)?;
        build_baseline_pyramid(&image, &dataset.features)?
    };

    let (w, h) = (k.width, k.height);
    let usable: Vec<bool> = (0..w * h).map(|i| warp.mask[i] && in_interp_domain(&warp.correspondences[i], w, h)).collect();
    let n = dataset.num_points.min(w * h / 10);
    let selection = select_sparse_points(&warp.reference, &scene.depth, n, &mut rng, Some(&usable), POINT_MARGIN)?;

    Ok(BenchmarkPair {
        id: spec.id.clone(),
        seed: spec.seed,
        class: spec.class,
        photometric: spec.photometric,
        reference,
        target,
        points: selection.points,
        gt_pose,
        intrinsics: k,
        warp,
        point_warning: selection.warning,
    })
}

impl BenchmarkPair {
    /// Dense correspondence of full-resolution reference pixel `(col, row)`.
    pub fn correspondence(&self, col: usize, row: usize) -> Option<Vector2<f64>> {
        self.warp.correspondence(col, row)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub seed: u64,
    pub class: MagnitudeClass,
    pub photometric: PhotometricParams,
    /// Paths relative to the manifest's directory.
    pub reference: PathBuf,
    pub target: PathBuf,
    pub points: PathBuf,
    /// Twelve numbers, row-major `[R | t]`.
    pub gt_pose: String,
    pub num_points: usize,
    pub overlap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config: DatasetConfig,
    pub pairs: Vec<PairRecord>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "{}: manifest schema {} is not supported (expected {MANIFEST_SCHEMA_VERSION})",
                path.display(),
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json { path: path.into(), source: e })?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// A pair as read back from disk.
#[derive(Clone, Debug)]
pub struct LoadedPair {
    pub id: String,
    pub class: MagnitudeClass,
    pub reference: FeaturePyramid,
    pub target: FeaturePyramid,
    pub points: Vec<SparsePoint>,
    pub intrinsics: CameraIntrinsics,
    pub gt_pose: SE3Pose,
}

impl PairRecord {
    pub fn load(&self, root: &Path) -> Result<LoadedPair> {
        let (points, intrinsics) = read_points_file(root.join(&self.points))?;
        Ok(LoadedPair {
            id: self.id.clone(),
            class: self.class,
            reference: load_feature_pyramid(root.join(&self.reference))?,
            target: load_feature_pyramid(root.join(&self.target))?,
            points,
            intrinsics,
            gt_pose: parse_pose(&self.gt_pose)?,
        })
    }
}

impl From<BenchmarkPair> for LoadedPair {
    fn from(p: BenchmarkPair) -> Self {
        LoadedPair {
            id: p.id,
            class: p.class,
            reference: p.reference,
            target: p.target,
            points: p.points,
            intrinsics: p.intrinsics,
            gt_pose: p.gt_pose,
        }
    }
}

fn write_pair(pair: &BenchmarkPair, dir: &Path) -> Result<PairRecord> {
    let reference = PathBuf::from(format!("{}_ref.fmap", pair.id));
    let target = PathBuf::from(format!("{}_tgt.fmap", pair.id));
    let points = PathBuf::from(format!("{}_points.txt", pair.id));
    save_feature_pyramid(dir.join(&reference), &pair.reference)?;
    save_feature_pyramid(dir.join(&target), &pair.target)?;
    write_points_file(dir.join(&points), &pair.points, &pair.intrinsics)?;
    Ok(PairRecord {
        id: pair.id.clone(),
        seed: pair.seed,
        class: pair.class,
        photometric: pair.photometric,
        reference,
        target,
        points,
        gt_pose: format_pose(&pair.gt_pose),
        num_points: pair.points.len(),
        overlap: pair.warp.overlap,
    })
}

/// Generates every pair of `config` into `out_dir` and writes the manifest.
/// Pairs are generated in parallel; files are written in manifest order.
pub fn build_dataset(config: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = out_dir.as_ref();
    config.scene.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let specs = config.pair_specs();
    let mut records = Vec::with_capacity(specs.len());
    for chunk in specs.chunks(WRITE_CHUNK) {
        let pairs: Vec<BenchmarkPair> = chunk.par_iter().map(|s| generate_pair(s, config)).collect::<Result<_>>()?;
        for pair in &pairs {
            if let Some(w) = &pair.point_warning {
                log::warn!("{}: {w}", pair.id);
            }
            records.push(write_pair(pair, dir)?);
        }
    }
    let manifest = Manifest { schema_version: MANIFEST_SCHEMA_VERSION, config: config.clone(), pairs: records };
    manifest.save(dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
