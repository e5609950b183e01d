use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped into families by [`Error::family`], which the CLI
/// turns into exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows} rows, row {row} has {len} entries")]
    NotSquare { rows: usize, row: usize, len: usize },

    #[error("at least 2 classes are required, got {0}")]
    InvalidK(usize),

    #[error("row {row} sums to {sum}, expected 1")]
    RowSumViolation { row: usize, sum: f64 },

    #[error("entry ({row}, {col}) = {value} is outside [0, 1]")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error(
        "transposed contingency matrix is singular (det = {det:e}, condition = {condition:e})"
    )]
    SingularMatrix { det: f64, condition: f64 },

    #[error("class index {index} out of range for {k} classes")]
    IndexOutOfRange { index: usize, k: usize },

    #[error("non-finite value {value} at position {position}")]
    NonFiniteY { position: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("parameter on the boundary of the simplex: {0}")]
    BoundaryParameter(String),

    #[error("concentration parameter {value} at position {position} is not strictly positive")]
    NonPositiveConcentration { position: usize, value: f64 },

    #[error("operation requires exactly 2 classes, got {0}")]
    NotBinary(usize),

    #[error(
        "constraint starvation: {accepted} of {required} draws accepted after {attempted} attempts \
         (acceptance rate {acceptance_rate:e})"
    )]
    ConstraintStarvation {
        required: usize,
        accepted: usize,
        attempted: usize,
        acceptance_rate: f64,
    },

    #[error("no samples to summarize")]
    EmptySamples,

    #[error("confusion row {0} has no observations")]
    EmptyRow(usize),

    #[error("invalid counts vector: {0}")]
    InvalidCounts(String),

    #[error("{path}:{row}: unknown class label {label:?}")]
    UnknownLabel {
        path: String,
        row: usize,
        label: String,
    },

    #[error("{path}:{row}: {message}")]
    MalformedRow {
        path: String,
        row: usize,
        message: String,
    },

    #[error("{path}:{row}: y value {value:?} is not a finite number")]
    NonNumericY {
        path: String,
        row: usize,
        value: String,
    },

    #[error("invalid class manifest: {0}")]
    InvalidManifest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Coarse error categories; each maps to one CLI exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Input,
    Numerical,
    Config,
}

impl ErrorFamily {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorFamily::Input => 2,
            ErrorFamily::Numerical => 3,
            ErrorFamily::Config => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorFamily::Input => "input",
            ErrorFamily::Numerical => "numerical",
            ErrorFamily::Config => "config",
        }
    }
}

impl Error {
    pub fn family(&self) -> ErrorFamily {
        use Error::*;
        match self {
            IndexOutOfRange { .. }
            | NonFiniteY { .. }
            | UnknownLabel { .. }
            | MalformedRow { .. }
            | NonNumericY { .. }
            | InvalidManifest(_)
            | InvalidCounts(_)
            | Io { .. } => ErrorFamily::Input,
            SingularMatrix { .. } | ConstraintStarvation { .. } | EmptySamples | EmptyRow(_) => {
                ErrorFamily::Numerical
            }
            NotSquare { .. }
            | InvalidK(_)
            | RowSumViolation { .. }
            | NegativeEntry { .. }
            | DimensionMismatch { .. }
            | BoundaryParameter(_)
            | NonPositiveConcentration { .. }
            | NotBinary(_)
            | InvalidConfig(_) => ErrorFamily::Config,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.family().exit_code()
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
