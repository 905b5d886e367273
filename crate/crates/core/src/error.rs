use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid elevation grid: {0}")]
    InvalidGrid(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("lipschitz constant {lipschitz} does not exceed lambda_max(R^H R) = {lambda_max}")]
    LipschitzTooSmall { lipschitz: f64, lambda_max: f64 },
    #[error("rank-deficient system: {0}")]
    RankDeficient(String),
    #[error("R R^H is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("{what} hash mismatch: expected {expected}, found {found}")]
    HashMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("SNR is undefined for an all-zero clean measurement")]
    ZeroSignal,
    #[error("label selection kept no pixels; criteria are too strict")]
    EmptySelection,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid configuration at `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl fmt::Display) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.to_string(),
        }
    }

    /// Validation errors map to exit code 2 in the CLI, everything else to 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidGeometry(_)
                | Error::InvalidGrid(_)
                | Error::InvalidScene(_)
                | Error::InvalidConfig { .. }
                | Error::InvalidArgument(_)
        )
    }
}
