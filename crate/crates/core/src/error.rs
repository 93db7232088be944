use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. The CLI maps them onto exit codes with
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value produced in layer {layer}")]
    NonFiniteLayer { layer: usize },

    #[error("non-finite value at sample {index}: {what}")]
    NonFiniteSample { index: usize, what: &'static str },

    #[error("assumption {assumption} violated: {detail}")]
    Assumption { assumption: &'static str, detail: String },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("training diverged at epoch {epoch} (loss {loss:e}); last good parameters from epoch {last_good_epoch}")]
    Diverged {
        epoch: usize,
        loss: f64,
        last_good_epoch: usize,
        last_good: Box<crate::net::NetworkParams>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// 64 for usage errors (sysexits `EX_USAGE`), 2 for numerical failures,
    /// 1 for I/O and everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Dimension { .. } => 64,
            Error::Io(_) | Error::Json(_) | Error::Checkpoint { .. } => 1,
            _ => 2,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
