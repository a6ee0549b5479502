//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera pose: {0}")]
    InvalidPose(String),

    #[error("singular homography (|det| = {det:.3e})")]
    SingularHomography { det: f64 },

    #[error("homography has no physical camera decomposition: {0}")]
    NonPhysicalHomography(String),

    #[error("degenerate pose: {0}")]
    DegeneratePose(String),

    #[error("invalid field template: {0}")]
    InvalidTemplate(String),

    #[error("parse error in {context}: {msg}")]
    Parse { context: String, msg: String },

    #[error("invalid sampling distribution: {0}")]
    InvalidDistribution(String),

    #[error("image size mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    SizeMismatch {
        expected_w: u32,
        expected_h: u32,
        got_w: u32,
        got_h: u32,
    },

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("database is empty")]
    EmptyDatabase,

    #[error("database format: {0}")]
    DbFormat(String),

    #[error("database file truncated in record {record}")]
    DbTruncated { record: usize },

    #[error("database checksum mismatch")]
    DbChecksum,

    #[error("image format: {0}")]
    ImageFormat(String),

    #[error("degenerate region in IoU computation")]
    DegenerateRegion,

    #[error("alignment diverged: residual {after:.4} > {before:.4}")]
    LkDiverged { before: f64, after: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
