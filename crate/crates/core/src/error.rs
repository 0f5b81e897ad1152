use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FryError {
    #[error("config error: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("schema version {found} is not supported (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("format error: {0}")]
    Format(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T, E = FryError> = std::result::Result<T, E>;

impl FryError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FryError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 2 for bad
    /// configuration, 3 for unreadable or unwritable files, 4 for contract
    /// violations, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            FryError::Config(_) | FryError::Validation(_) => 2,
            FryError::Io { .. } | FryError::Checksum(_) | FryError::Schema { .. } | FryError::Format(_) => 3,
            FryError::Contract(_) => 4,
            FryError::Shape(_) => 1,
        }
    }
}
