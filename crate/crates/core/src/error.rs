use thiserror::Error;

/// Errors produced by the simulation and verification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("velocity kernel has growth exponent {gamma} > 0 but no truncation level was given")]
    MissingTruncation { gamma: f64 },

    #[error("non-finite state detected at t = {t}")]
    NonFinite { t: f64 },

    #[error("thinning acceptance ratio {ratio} outside [0, 1]")]
    MajorantViolated { ratio: f64 },

    #[error("empty measure")]
    EmptyMeasure,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
