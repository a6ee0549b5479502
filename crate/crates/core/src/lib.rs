//! fieldcal — single-image sports camera calibration.
//!
//! Broadcast sports cameras live in a narrow corner of pose space: fixed
//! tripods near the halfway line, a wide pan range, a shallow downward tilt
//! and a large zoom range. This crate exploits that prior to calibrate a
//! camera from one binary field-marking image:
//!
//! 1. **sampler** – draw camera poses from the configured prior
//!    (Gaussian location, uniform pan/tilt/focal).
//! 2. **render** – rasterize the field template under each pose into a
//!    binary edge image.
//! 3. **hog** / **db** – embed edge images as HOG descriptors and store
//!    (descriptor, pose) records in a flat searchable database.
//! 4. **distance** / **lk** – at query time, retrieve the nearest pose and
//!    refine it by Lucas-Kanade alignment over truncated distance images,
//!    chaining the estimated warp back into a metric camera pose.
//! 5. **eval** – IoU metrics on the template plane and the synthetic
//!    camera-displacement experiment harness.

pub mod camera;
pub mod db;
pub mod distance;
pub mod error;
pub mod eval;
pub mod hog;
pub mod image_io;
pub mod lk;
pub mod polygon;
pub mod render;
pub mod sampler;
pub mod template;

pub use camera::{
    CameraPose, Homography, ProjectionMatrix, homography_from_pose, pose_from_homography,
    project_point, projection_from_pose, rotation_from_pose,
};
pub use db::{FeaturePoseDatabase, PoseVec, QueryHit, build_database, load_database, query_nearest, save_database};
pub use distance::{DistanceImage, distance_transform};
pub use error::{Error, Result};
pub use eval::{
    DisplacementExperimentConfig, ExperimentReport, IoUReport, iou_part, iou_whole,
    run_displacement_experiment,
};
pub use hog::{FeatureVector, HogConfig, hog_features};
pub use lk::{LkDiagnostics, LkSettings, RefinementResult, lk_align, refine_pose};
pub use render::{EdgeImage, GrayRaster, binarize, render_edge_image, resize_to_feature_scale};
pub use sampler::{PoseDistribution, sample_poses};
pub use template::FieldTemplate;
