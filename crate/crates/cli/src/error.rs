use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failures of a subcommand, each mapped to a stable process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or inputs that contradict each other or the model.
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file was read but its contents are malformed.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] sgmm::Error),
    /// The model was written, but some EM loop hit its iteration cap.
    #[error("fit did not converge; model written to {0}")]
    NotConverged(PathBuf),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Format { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::NotConverged(_) => 4,
            CliError::Model(e) => match e {
                sgmm::Error::DimensionMismatch { .. }
                | sgmm::Error::InvalidInput(_)
                | sgmm::Error::RowMisalignment => 2,
                _ => 1,
            },
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
