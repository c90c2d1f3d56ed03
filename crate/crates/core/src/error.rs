use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid image shape: {0}")]
    Shape(String),
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: String, right: String },
    #[error("ratio {name} = {value} outside {range}")]
    Ratio {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("scorer `{name}` failed: {reason}")]
    Scorer { name: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("image file {path}: {reason}")]
    ImageFile { path: PathBuf, reason: String },
    #[error("training aborted on sample {sample_id}: {reason}")]
    TrainingAborted { sample_id: String, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed metrics log: {0}")]
    Metrics(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
