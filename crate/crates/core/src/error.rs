use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("dimension mismatch for `{what}`: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("test function `{0}` has no analytic gradient; supply `grad` to evaluate the square field")]
    MissingGradient(String),

    #[error("model kind mismatch: {0}")]
    ModelKind(String),

    /// The Malliavin covariance of a path is numerically singular.
    #[error("invalid path: Q_T below invertibility threshold (min eigenvalue {min_eig:e}, trace {trace:e})")]
    InvalidPath { min_eig: f64, trace: f64 },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("unsupported model for this operation: {0}")]
    Unsupported(String),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl Error {
    pub fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
