use thiserror::Error;

use crate::model::Action;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("illegal action {action}: {reason}")]
    IllegalAction { action: Action, reason: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid initial belief: {0}")]
    InvalidSpec(String),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("plan incomplete: branch after [{history}] has no eligible action")]
    PlanIncomplete { history: String },

    #[error("session state: {0}")]
    SessionState(String),

    #[error("no feasible point: {0}")]
    NoFeasiblePoint(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
