use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot load data: {0}")]
    Data(msl_core::Error),

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("{failed} of {total} experiment cells failed")]
    CellsFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn invalid(err: msl_core::Error) -> Self {
        CliError::Config(err.to_string())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// 2 for anything detected before a run starts, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Data(_) => 2,
            CliError::Io { .. } | CliError::CellsFailed { .. } => 1,
        }
    }
}
