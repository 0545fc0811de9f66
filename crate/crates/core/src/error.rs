use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PltmError>;

#[derive(Debug, Error)]
pub enum PltmError {
    #[error("invalid interval [{s}, {t}]: endpoints must be finite with s < t")]
    InvalidInterval { s: f64, t: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: expected {expected} entries, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("denominator {value:e} is at or below the collapse threshold {threshold:e}")]
    DegenerateDenominator { value: f64, threshold: f64 },

    #[error("loss became non-finite ({value}) at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, value: f64 },

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("{path}: bad magic number {found:#010x} at offset 0, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated file, needed {needed} bytes at offset {offset}")]
    TruncatedFile {
        path: PathBuf,
        offset: usize,
        needed: usize,
    },

    #[error("count mismatch: {images_path} holds {images} images, {labels_path} holds {labels} labels (header offset 4)")]
    CountMismatch {
        images_path: PathBuf,
        labels_path: PathBuf,
        images: usize,
        labels: usize,
    },

    #[error("{path}: invalid data at offset {offset}: {reason}")]
    InvalidData {
        path: PathBuf,
        offset: usize,
        reason: String,
    },

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
