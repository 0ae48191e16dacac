use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("index {index} out of range for population of size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("time {t} outside grid range [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("singular moment matrix: min eigenvalue {min_eigenvalue:e} <= threshold {threshold:e}")]
    Singular { min_eigenvalue: f64, threshold: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e} below tolerance {tolerance:e}")]
    NotPositiveSemidefinite { eigenvalue: f64, tolerance: f64 },

    #[error("degenerate variance at grid point {index}: {value:e}")]
    DegenerateVariance { index: usize, value: f64 },

    #[error("enumeration needs {required} samples but cap is {cap}")]
    EnumerationCap { required: u128, cap: u128 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("replicate {index}: {source}")]
    Replicate { index: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by ill-conditioned or degenerate numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Replicate { source, .. } => source.is_numerical(),
            other => matches!(
                other,
                Error::Singular { .. } | Error::NotPositiveSemidefinite { .. } | Error::DegenerateVariance { .. }
            ),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse {
                line,
                message: format!("{other:?}"),
            },
        }
    }
}
