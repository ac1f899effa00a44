use std::io;

/// Errors produced by the auditing toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad token")]
    BadToken,
    #[error("query budget exceeded")]
    BudgetExceeded,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("shadow model {index} failed: {source}")]
    ShadowFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("single-class input: both members and non-members are required")]
    SingleClass,
    #[error("format error: {0}")]
    Format(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
