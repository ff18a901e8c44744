use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("oracle sidecar data not available")]
    MissingOracle,

    #[error("no patient recommended; ERUPT undefined")]
    NoRecommendation,

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("missing column `{column}` in {path}")]
    MissingColumn { path: PathBuf, column: String },

    #[error("model config hash mismatch: blob has {found}, expected {expected}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        last_finite: Box<crate::net::TrainOutcome>,
    },

    #[error("missing artifact {path}; run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: String },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
