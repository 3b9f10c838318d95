//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by specification validation, numerical routines, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A distribution or structure specification violates an invariant.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// An operation argument is outside its domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A requested moment (variance, kurtosis, fractional moment) does not exist
    /// for the given degrees of freedom.
    #[error("moment undefined: {0}")]
    MomentUndefined(String),

    /// A matrix required to be invertible is numerically singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Adaptive quadrature failed to reach the requested tolerance.
    #[error("quadrature did not converge: {context} (achieved error estimate {estimate:.3e})")]
    QuadratureNonConvergence {
        /// What was being integrated.
        context: String,
        /// Achieved error estimate at abort.
        estimate: f64,
    },

    /// The optimizer stopped without meeting its convergence criteria.
    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed config, spec, or data file.
    #[error("parse error: {0}")]
    Parse(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
