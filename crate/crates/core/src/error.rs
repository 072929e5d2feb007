//! Crate-wide error type and the mapping onto CLI exit codes.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape mismatch, wrong tape, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An operation produced NaN or an infinity.
    #[error("numeric failure in `{op}`: {detail}")]
    Numeric { op: &'static str, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("data error: {0}")]
    Data(String),

    /// Episode construction failed, e.g. a class without enough samples.
    #[error("episode error: {0}")]
    Episode(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 2,
            Error::Parse { .. } | Error::Data(_) | Error::Episode(_) | Error::Io(_) | Error::Json(_) => 3,
            Error::Numeric { .. } => 4,
        }
    }
}
