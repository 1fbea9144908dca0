use thiserror::Error;

/// Errors raised by scene construction, synthesis and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range 1..={max}")]
    Index { index: usize, max: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("parse error at line {line}, column {column}: {message}\n  | {context}")]
    Parse {
        line: usize,
        column: usize,
        context: String,
        message: String,
    },

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Prefixes the field name of a config error with `section.`.
    pub fn in_section(self, section: &str) -> Self {
        match self {
            Error::Config { field, reason } => Error::Config {
                field: format!("{section}.{field}"),
                reason,
            },
            other => other,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
