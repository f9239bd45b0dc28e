use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error("malformed ICD code {0:?}")]
    MalformedCode(String),

    #[error("unsupported ICD version {0:?}")]
    UnsupportedIcdVersion(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("data inconsistency: {0}")]
    DataInconsistency(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate 2x2 table (zero marginal)")]
    DegenerateTable,

    #[error("not testable: {0}")]
    NotTestable(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn input(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Input {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Errors caused by bad files, flags or configuration rather than by a
    /// failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Input { .. }
                | Error::MalformedCode(_)
                | Error::UnsupportedIcdVersion(_)
                | Error::Config(_)
        )
    }
}
