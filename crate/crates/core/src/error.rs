use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A distribution or model parameter violates its invariants.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Array lengths or model layer shapes do not match.
    #[error("shape error: {0}")]
    Shape(String),

    /// Aggregation produced a zero scale.
    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    /// Reference and optimal mean scores coincide, so the skill score is undefined.
    #[error("degenerate reference: reference score {reference} equals optimal score {optimal}")]
    DegenerateReference { reference: f64, optimal: f64 },

    /// Network training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    /// Configuration is malformed; `key` names the offending field.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: msg.into(),
        }
    }
}
