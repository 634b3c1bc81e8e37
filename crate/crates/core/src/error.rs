use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// The system matrix lost positive definiteness during factorization.
    /// `condition_estimate` is the ratio of the largest to the smallest
    /// Cholesky pivot seen (infinite when a pivot was not positive).
    #[error(
        "singular system: pivot {pivot:e} at row {row} (condition estimate {condition_estimate:e})"
    )]
    SingularSystem {
        row: usize,
        pivot: f64,
        condition_estimate: f64,
    },

    #[error("iterative solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected,
                found,
            })
        }
    }

    pub fn is_singular(&self) -> bool {
        matches!(self, Error::SingularSystem { .. })
    }
}
