use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("point {0:?} lies outside the domain")]
    DomainViolation(Vec<f64>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "training diverged at iteration {iteration}: {reason} (|theta| = {theta_norm:e}, last batch starts {last_batch:?})"
    )]
    Divergence {
        iteration: u64,
        reason: String,
        theta_norm: f64,
        last_batch: Vec<Vec<f64>>,
    },

    #[error("certificate is invalid: {0}")]
    InvalidCertificate(String),

    #[error("stage {stage} certificate is invalid: {reason}")]
    InvalidStage { stage: usize, reason: String },

    #[error("degenerate rate r = {0}; need 0 < r < 1")]
    DegenerateRate(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
