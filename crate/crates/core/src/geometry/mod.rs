//! SE(3) arithmetic, the pinhole camera, and pose-error metrics.

pub mod camera;
pub mod metrics;
pub mod pose_io;
pub mod se3;

pub use camera::{in_interp_domain, level_scale, project, unproject, warp_point, CameraIntrinsics, Warped, NUM_LEVELS, Z_MIN};
pub use metrics::{rotation_error, translation_error};
pub use pose_io::{format_pose, parse_pose, read_pose_file, write_pose_file};
pub use se3::{boxplus, hat, rotation_about, se3_exp, se3_log, SE3Pose, Twist};
