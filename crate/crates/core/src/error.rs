use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration or mismatched shapes. `path` names the offending key when known.
    #[error("configuration error{}: {message}", path.as_ref().map(|p| format!(" at `{p}`")).unwrap_or_default())]
    Config {
        path: Option<String>,
        message: String,
    },

    /// API called out of order or with malformed arguments.
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite values during optimization or simulation.
    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config {
            path: None,
            message: message.into(),
        }
    }

    pub fn config_at(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: Some(path.into()),
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Error::Usage(message.into())
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical(message.into())
    }
}
