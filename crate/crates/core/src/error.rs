use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a closed-form expression.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller broke a precondition (mismatched lengths, empty inputs, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A domain object failed validation.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("infinite delay: {0}")]
    InfiniteDelay(String),

    #[error("degenerate allocation problem: {0}")]
    Degenerate(String),

    #[error("action space of {size} exceeds the cap of {cap}; {hint}")]
    ActionSpaceTooLarge { size: u128, cap: u64, hint: String },

    #[error("unknown accuracy configuration: {0}")]
    UnknownConfiguration(String),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("configuration error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
