use std::path::{Path, PathBuf};
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// A reproduce run finished with at least one failing check.
    pub const CHECK_FAILED: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const PARSE: u8 = 4;
    pub const FIT: u8 = 5;
    pub const IO: u8 = 6;
    pub const MODEL: u8 = 7;
}

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config error in {source_name}: {message}")]
    Config { source_name: String, message: String },
    #[error("{path}: row {row}, column '{column}': {message}")]
    Parse {
        path: String,
        row: u64,
        column: String,
        message: String,
    },
    #[error("schema error in {path}: {message}")]
    Schema { path: String, message: String },
    #[error("fit failed: {0}")]
    Fit(String),
    #[error(transparent)]
    Model(#[from] triplet_sense::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl WorkbenchError {
    pub fn exit_code(&self) -> u8 {
        match self {
            WorkbenchError::Usage(_) => exit::USAGE,
            WorkbenchError::Config { .. } => exit::CONFIG,
            WorkbenchError::Parse { .. } | WorkbenchError::Schema { .. } => exit::PARSE,
            WorkbenchError::Fit(_) => exit::FIT,
            WorkbenchError::Io { .. } => exit::IO,
            WorkbenchError::Model(_) => exit::MODEL,
        }
    }

    pub(crate) fn config(source_name: impl Into<String>, message: impl Into<String>) -> Self {
        WorkbenchError::Config {
            source_name: source_name.into(),
            message: message.into(),
        }
    }

    pub(crate) fn schema(path: &Path, message: impl Into<String>) -> Self {
        WorkbenchError::Schema {
            path: path.display().to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        WorkbenchError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = WorkbenchError> = std::result::Result<T, E>;
