use std::path::PathBuf;

use bcae::ErrorClass;
use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] bcae::Error),

    #[error("usage: {0}")]
    Usage(String),

    #[error("cannot read config {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ExitStatus {
    Success = 0,
    Usage = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Plugin = 6,
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_status(&self) -> ExitStatus {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Io => ExitStatus::Io,
                ErrorClass::Format => ExitStatus::Format,
                ErrorClass::Config => ExitStatus::Usage,
                ErrorClass::Numeric => ExitStatus::Numeric,
                ErrorClass::Plugin => ExitStatus::Plugin,
            },
            CliError::Usage(_) | CliError::ConfigFile { .. } => ExitStatus::Usage,
            CliError::Io { .. } => ExitStatus::Io,
        }
    }
}
