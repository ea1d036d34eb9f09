use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solver, the map estimator and the data layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry at {0}")]
    NonFiniteEntry(String),

    #[error("non-positive weight {value} at index {index}")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("negative argument {0}")]
    NegativeArgument(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cost map norm {norm} exceeds radius {radius}")]
    NormExceedsRadius { norm: f64, radius: f64 },

    #[error("numerical overflow: {0}")]
    NumericalOverflow(String),

    #[error("degenerate marginal: entry {index} = {value:e}")]
    DegenerateMarginal { index: usize, value: f64 },

    #[error("point cloud has no labels")]
    MissingLabels,

    #[error("k = {k} exceeds number of training points {available}")]
    KTooLarge { k: usize, available: usize },

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("non-numeric feature {value:?} at line {line}, column {column}")]
    NonNumericFeature {
        line: usize,
        column: usize,
        value: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
