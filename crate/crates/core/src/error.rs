// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Errors produced by the point-cloud, transport and network-block routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// A curve configuration that cannot be represented.
    #[error("invalid curve configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Mismatched tensor or cloud shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The multiplicative Sinkhorn kernel underflowed or overflowed.
    #[error(
        "numeric underflow in multiplicative Sinkhorn at iteration {iteration}; \
         rerun in log-domain mode"
    )]
    Underflow { iteration: usize },

    /// A non-finite value appeared where a finite one is required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The transport plan did not reach the marginal tolerance.
    #[error("Sinkhorn did not converge after {iterations} iterations (marginal violation {violation:e})")]
    NotConverged { iterations: usize, violation: f64 },

    /// Malformed text input, with a 1-based line number.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
