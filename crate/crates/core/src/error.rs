use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must have at least one row and one column, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength {
        rows: usize,
        cols: usize,
        len: usize,
    },

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("shrinkage radius must be positive, got {0}")]
    NonPositiveRadius(f64),

    #[error("quantization resolution must be positive, got {0}")]
    NonPositiveEta(f64),

    #[error("dither length {dither} does not match vector length {len}")]
    DitherLengthMismatch { len: usize, dither: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("sample counts differ: {left} vs {right}")]
    SampleCountMismatch { left: usize, right: usize },

    #[error("truncation level must be positive, got {0}")]
    NonPositiveTau(f64),

    #[error("calibration needs at least two samples, got {0}")]
    TooFewSamples(usize),

    #[error("calibration data is degenerate (all samples zero)")]
    DegenerateData,

    #[error("degrees of freedom must be positive and finite, got {0}")]
    BadNu(f64),

    #[error("dimension {dim} is too small (need at least {min})")]
    DimTooSmall { dim: usize, min: usize },

    #[error("rank {rank} exceeds min({rows}, {cols})")]
    BadRank {
        rank: usize,
        rows: usize,
        cols: usize,
    },

    #[error("{0}")]
    BadSpec(String),

    #[error("{path}: expected {expected}, found {found}")]
    BadShape {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}:{line}: entry {value:?} is not 0 or 1")]
    NonBinaryEntry {
        path: PathBuf,
        line: usize,
        value: String,
    },

    #[error("log-log fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("log-log fit needs positive values, got {0}")]
    NonPositiveError(f64),

    #[error("no records to summarize")]
    EmptyRecords,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error came from the filesystem rather than from bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
