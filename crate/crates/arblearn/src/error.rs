//! Crate-wide error type.
//!
//! Every fallible operation in the library returns [`Result`]. Variants carry
//! enough context (indices, expected vs. actual sizes, violation lists) for a
//! caller to report the problem without re-deriving it.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector argument does not match the horizon or feature dimension it
    /// must pair with.
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// The storage description itself is inconsistent (bounds, efficiency,
    /// initial state of charge, or non-finite entries).
    #[error("infeasible storage spec: {reason}")]
    InfeasibleSpec { reason: String },

    /// The iterative solver ran out of iterations before reaching its
    /// convergence tolerance.
    #[error(
        "solver did not converge within {iterations} iterations \
         (relative gap {gap:.3e}, tolerance {tol:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        gap: f64,
        tol: f64,
    },

    /// A discretized computation would exceed its configured cell budget.
    #[error("resource limit exceeded: {cells} cells requested, cap is {cap}")]
    ResourceLimit { cells: usize, cap: usize },

    /// A training target violates the dispatch feasible set beyond the
    /// accepted slack.
    #[error("infeasible target schedule: {violations} constraint(s) violated, worst {worst:.3e}")]
    InfeasibleTarget { violations: usize, worst: f64 },

    /// A tensor argument has the wrong shape for the network it is applied to.
    #[error("shape mismatch for {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    /// A CSV cell or header could not be interpreted.
    #[error("parse error at row {row}, column {col}: {message}")]
    ParseError {
        row: usize,
        col: String,
        message: String,
    },

    /// The time series is uniformly spaced but has whole missing steps.
    #[error("time series has {} missing timestamp(s), first {first}", missing.len())]
    Gap {
        missing: Vec<chrono::NaiveDateTime>,
        first: chrono::NaiveDateTime,
    },

    /// Two consecutive timestamps are not an integer number of steps apart.
    #[error("non-uniform step at row {row}: {actual} vs. expected step {expected}")]
    NonUniformStep {
        row: usize,
        expected: String,
        actual: String,
    },

    /// The series is too short for the requested window layout.
    #[error("insufficient data: need at least {needed} points, have {available}")]
    InsufficientData { needed: usize, available: usize },

    /// A required input channel is absent from the series.
    #[error("missing channel '{channel}'")]
    MissingChannel { channel: &'static str },

    /// Two series that must be scored against each other differ in length.
    #[error("length mismatch between {left_name} ({left}) and {right_name} ({right})")]
    LengthMismatch {
        left_name: &'static str,
        left: usize,
        right_name: &'static str,
        right: usize,
    },

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    /// A checkpoint or run configuration file does not match the expected
    /// schema (unknown keys, wrong version, inconsistent dimensions).
    #[error("schema mismatch in {what}: {reason}")]
    SchemaMismatch { what: &'static str, reason: String },

    /// An argument that must be strictly positive (or otherwise in range)
    /// is not.
    #[error("invalid argument {what}: {reason}")]
    InvalidArgument { what: &'static str, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attaches a path to a raw i/o error.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
