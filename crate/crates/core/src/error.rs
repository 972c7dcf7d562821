use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    RawIo(#[from] std::io::Error),

    /// Malformed binary input. `offset` is the byte position where the
    /// problem was detected.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} is not positive along axis {axis} (got {value})")]
    NonPositiveExtent { what: String, axis: usize, value: i64 },

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("synthetic generator could not reach occupancy {target:.4} (achieved {achieved:.4})")]
    Occupancy { target: f64, achieved: f64 },

    #[error("model hash mismatch: container {container:016x}, model {model:016x}")]
    ModelHash { container: u64, model: u64 },

    #[error("plugin {name} failed: {message}")]
    Plugin { name: String, message: String },
}

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Format,
    Config,
    Numeric,
    Plugin,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    pub fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::Shape {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::RawIo(_) => ErrorClass::Io,
            Error::Parse { .. } | Error::ModelHash { .. } => ErrorClass::Format,
            Error::Shape { .. }
            | Error::Config(_)
            | Error::NonPositiveExtent { .. }
            | Error::Occupancy { .. } => ErrorClass::Config,
            Error::Divergence(_) => ErrorClass::Numeric,
            Error::Plugin { .. } => ErrorClass::Plugin,
        }
    }
}
