use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("state error: {0}")]
    State(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("numeric error: {message}")]
    Numeric {
        message: String,
        index: Option<usize>,
    },

    /// Training produced a non-finite loss. The model has been restored to the
    /// best parameters seen before the failure.
    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("parameter mismatch for `{name}`: {detail}")]
    ParamMismatch { name: String, detail: String },

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("split quota error: {0}")]
    Quota(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// Process exit code for the command-line front end: 3 for numeric
    /// failures, 2 for everything caused by bad input or configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } | Error::Diverged { .. } => 3,
            _ => 2,
        }
    }
}
