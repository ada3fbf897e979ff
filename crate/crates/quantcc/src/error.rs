//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by samplers, estimators, and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// A distribution, problem, or solver parameter is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An operation was called with arguments violating its preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A constraint evaluation returned NaN or infinity.
    #[error("constraint evaluation produced a non-finite value at scenario {scenario}")]
    NonFiniteEvaluation { scenario: usize },

    /// Every smoothing-kernel weight vanished; the bandwidth is too small
    /// relative to the spread of constraint values around the quantile.
    #[error("all smoothing kernel weights are zero; increase the bandwidth epsilon")]
    DegenerateBandwidth,

    /// The scenario-gradient callable is required but was not provided.
    #[error("problem does not expose per-scenario constraint gradients (required by the smoothing estimator)")]
    MissingScenarioGradient,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
