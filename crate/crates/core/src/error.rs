use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the solvers, loaders and trainer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("measure has no support points")]
    EmptyMeasure,

    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("weights have zero total mass")]
    ZeroMass,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("exponent argument {argument:.3e} exceeds the range |x| <= 700; increase lambda_m")]
    Overflow { argument: f64 },

    #[error("{solver} did not converge in {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("problem size {size} exceeds the limit {limit}")]
    SizeLimit { size: usize, limit: usize },

    #[error("metric is {found}x{found} but the displacement mode expects {expected}x{expected}")]
    ModeMismatch { expected: usize, found: usize },

    #[error("gradient undefined: transport plan has zero entries; enable smoothing")]
    UndefinedGradient,

    #[error("invalid feature grouping: {0}")]
    InvalidGrouping(String),

    #[error("training diverged at epoch {epoch}: loss {loss:.3e}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
