//! Multi-channel feature maps, bilinear sampling, and pyramids.

pub mod fmap;
pub mod map;
pub mod pyramid;

pub use fmap::{load_feature_pyramid, save_feature_pyramid};
pub use map::{FeatureMap, Sample};
pub use pyramid::{build_baseline_pyramid, downsample_area, gradient_magnitude, normalize_channels, BaselineConfig, FeaturePyramid};
