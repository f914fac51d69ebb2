//! CLI error classes and their exit codes.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or arguments (exit 2).
    Schema(String),
    /// Numerical abort inside a simulation (exit 3).
    Numeric(String),
    /// File system failure (exit 1).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "schema error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical abort: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<flocksim_core::Error> for CliError {
    fn from(e: flocksim_core::Error) -> Self {
        use flocksim_core::Error as E;
        match e {
            E::NonFinite { .. } | E::MajorantViolated { .. } => CliError::Numeric(e.to_string()),
            E::Io(_) | E::Csv(_) => CliError::Io(e.to_string()),
            E::InvalidParameter(_)
            | E::Unsupported(_)
            | E::DimensionMismatch { .. }
            | E::MissingTruncation { .. }
            | E::EmptyMeasure => CliError::Schema(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
