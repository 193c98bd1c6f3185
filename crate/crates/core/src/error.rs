use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate labeling: {0}")]
    DegenerateLabels(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("solver did not converge after {iterations} iterations (best relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("class {label} has {available} examples, {needed} requested")]
    ClassTooSmall {
        label: i8,
        needed: usize,
        available: usize,
    },

    #[error("no centroid available for class {0}")]
    MissingCentroidClass(i8),

    #[error("node {0} has zero degree (disconnected graph)")]
    ZeroDegree(usize),

    #[error("class {label} covariance is singular after regularization with lambda {lambda:e}; use a larger regularizer")]
    SingularCovariance { label: i8, lambda: f64 },

    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("no comparable pairs: all truth values are equal")]
    NoComparablePairs,

    #[error("{path}: row {row}, column '{column}': {message}")]
    Csv {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("mismatched instance ids: {0}")]
    MismatchedIds(String),

    #[error("run with seed {seed} failed: {source}")]
    RunFailed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable identifier used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DegenerateLabels(_) => "degenerate_labels",
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::NonFinite { .. } => "non_finite",
            Error::NotConverged { .. } => "not_converged",
            Error::NotPositiveDefinite => "not_positive_definite",
            Error::ClassTooSmall { .. } => "class_too_small",
            Error::MissingCentroidClass(_) => "missing_centroid_class",
            Error::ZeroDegree(_) => "zero_degree",
            Error::SingularCovariance { .. } => "singular_covariance",
            Error::DegenerateTask(_) => "degenerate_task",
            Error::NoComparablePairs => "no_comparable_pairs",
            Error::Csv { .. } => "csv",
            Error::Parse(_) => "parse",
            Error::MismatchedIds(_) => "mismatched_ids",
            Error::RunFailed { .. } => "run_failed",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
    Error::io(path, source)
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
