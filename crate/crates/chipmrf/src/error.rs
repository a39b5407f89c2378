use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A distribution or chain parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Data dimensions do not match the experimental design.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A text input could not be parsed.
    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A model fit failed (component collapse, no usable data, ...).
    #[error("fit failed: {0}")]
    FitFailure(String),

    /// The sampler encountered a non-finite log-likelihood.
    #[error("non-finite log-likelihood at iteration {iteration}: {detail}")]
    NumericalBlowup { iteration: usize, detail: String },

    /// Statistically degenerate input (e.g. zero variance in a t-test).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
