use std::path::Path;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] scoremem::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl LabError {
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        LabError::Io { path: path.display().to_string(), message: err.to_string() }
    }

    /// 2 for usage and contract violations, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Usage(_) => 2,
            LabError::Core(scoremem::Error::UndefinedObservation) => 2,
            LabError::Core(_) | LabError::Io { .. } => 1,
        }
    }
}
