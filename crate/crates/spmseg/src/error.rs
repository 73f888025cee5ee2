use std::path::Path;

use thiserror::Error;

/// Failure of a command, classified by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config keys or parameter values. Exit status 1.
    #[error("{0}")]
    Usage(String),
    /// Missing or unreadable inputs, malformed files. Exit status 2.
    #[error("{0}")]
    Data(String),
    /// Anything else, including failures writing outputs. Exit status 3.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn read(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("cannot read {}: {err}", path.display()))
    }

    pub fn write(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Internal(format!("cannot write {}: {err}", path.display()))
    }
}

impl From<spmseg_core::Error> for CliError {
    fn from(e: spmseg_core::Error) -> Self {
        use spmseg_core::Error as E;
        match e {
            E::InvalidParameter { .. } => CliError::Usage(e.to_string()),
            E::SizeMismatch { .. } | E::InvalidData(_) | E::Shape(_) | E::Format(_) | E::NonFiniteLoss { .. } => {
                CliError::Data(e.to_string())
            }
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
