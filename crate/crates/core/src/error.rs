use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index ({i}, {j}, {c}) out of range for shape {h}x{w}x{ch}")]
    IndexOutOfRange {
        i: usize,
        j: usize,
        c: usize,
        h: usize,
        w: usize,
        ch: usize,
    },

    #[error("singular: {0}")]
    Singular(String),

    #[error("kernel violates its mask: {0}")]
    MaskViolation(String),

    #[error("matrix too large for the dense oracle: n = {n} exceeds {limit}")]
    SizeGuard { n: usize, limit: usize },

    #[error("actnorm layer used before initialization")]
    Uninitialized,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
