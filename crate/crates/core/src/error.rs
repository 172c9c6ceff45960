use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, sizes).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Cholesky hit a non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{0} did not converge")]
    NoConvergence(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("malformed data file {path}: {message}")]
    Data { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures that stem from numerics rather than inputs or config.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NonFinite(_)
                | Error::NoConvergence(_)
                | Error::Diverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
