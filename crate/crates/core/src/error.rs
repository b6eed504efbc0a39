use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the CLI to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Backend,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset is empty after preprocessing")]
    EmptyDataset,

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("AUC is undefined: labels contain a single class")]
    UndefinedAuc,

    #[error("no valid positions: {0}")]
    NoValidPositions(&'static str),

    #[error("missing embeddings for nodes: {}", .0.join(", "))]
    MissingNodes(Vec<String>),

    #[error("backend error: {0}")]
    Backend(String),

    /// The io error is part of the message rather than a chained source,
    /// so `{:#}` does not print it twice.
    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },
}

impl Error {
    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Backend(_) => ErrorCategory::Backend,
            Error::ShapeMismatch { .. }
            | Error::NonFinite(_)
            | Error::NonScalarLoss(_)
            | Error::MissingGradient(_)
            | Error::Diverged { .. } => ErrorCategory::Numerical,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::EmptyDataset
            | Error::UndefinedAuc
            | Error::NoValidPositions(_)
            | Error::MissingNodes(_)
            | Error::Io { .. } => ErrorCategory::Data,
        }
    }
}

/// Reads a whole file, attaching the path to any I/O error.
pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &std::path::Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
