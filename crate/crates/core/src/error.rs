use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = OiaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OiaError {
    #[error("{op}: singular value decomposition did not converge")]
    SvdFailure { op: &'static str },

    #[error("{op}: matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite {
        op: &'static str,
        min_eigenvalue: f64,
    },

    #[error("{op}: no strictly positive eigenvalue, nothing to water-fill")]
    NoUsableDimension { op: &'static str },

    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("{op}: quadrature did not reach tolerance {requested:e} (estimated error {achieved:e})")]
    Quadrature {
        op: &'static str,
        requested: f64,
        achieved: f64,
    },

    #[error("{op}: fixed-point iteration stalled after {iterations} iterations (residual {residual:e})")]
    FixedPoint {
        op: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{op}: could not bracket a root")]
    Bracketing { op: &'static str },

    #[error("invalid experiment specification: {0}")]
    InvalidSpec(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl OiaError {
    /// Invalid input (as opposed to a numerical breakdown). The CLI maps the
    /// two classes onto different exit codes.
    pub fn is_invalid_input(&self) -> bool {
        matches!(self, OiaError::InvalidSpec(_) | OiaError::InvalidArgument { .. })
    }

    pub fn shape(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        OiaError::ShapeMismatch {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
