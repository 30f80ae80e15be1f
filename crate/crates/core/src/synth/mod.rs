//! Synthetic ground truth: procedural scenes, exact warps, pose and
//! photometric perturbations, sparse points, and benchmark datasets.

pub mod dataset;
pub mod perturb;
pub mod scene;
pub mod warp;

pub use dataset::{build_dataset, generate_pair, BenchmarkPair, DatasetConfig, LoadedPair, Manifest, PairRecord, PairSpec, MANIFEST_FILE};
pub use perturb::{
    photometric_perturb, sample_pose_perturbation, sample_pose_with_flow, select_sparse_points, FlowProbe, MagnitudeClass,
    PhotometricParams, PointSelection,
};
pub use scene::{generate_scene, gradient_coverage, SceneConfig, SyntheticScene};
pub use warp::{pullback_pyramid, warp_scene, WarpedPair};
