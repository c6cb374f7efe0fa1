use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("config parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("sampling produced non-finite value {value} at node {node:?}")]
    Sampling { node: (usize, usize), value: f64 },

    #[error("field lives on a different grid than the operator")]
    GridMismatch,

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("blow-up: non-finite value in RK stage {stage} at node {node}")]
    BlowUp { stage: u8, node: usize },

    #[error("runaway subcycling: more than {limit} steps requested")]
    Runaway { limit: usize },

    #[error("at step {step} (t = {time}): {source}")]
    AtStep {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("power-law fit error: {0}")]
    Fit(String),

    #[error("malformed snapshot: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used by the command line front-end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Runtime,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Sampling { .. } | Error::Fit(_) => {
                ErrorKind::Config
            }
            Error::GridMismatch
            | Error::Internal(_)
            | Error::BlowUp { .. }
            | Error::Runaway { .. } => ErrorKind::Runtime,
            Error::AtStep { source, .. } => source.kind(),
            Error::Format(_) | Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
