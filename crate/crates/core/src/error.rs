use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot partition {points} points across {clients} clients")]
    InfeasiblePartition { points: usize, clients: usize },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown client id {0}")]
    UnknownClient(u32),

    #[error("exact Shapley enumeration supports at most {max} participants, got {got}")]
    OracleSize { got: usize, max: usize },

    #[error("ledger sequencing: expected round {expected}, got {got}")]
    Sequencing { expected: u32, got: u32 },

    #[error("round {0} not found in ledger")]
    RoundNotFound(u32),

    #[error("malformed ledger: {0}")]
    LedgerFormat(String),

    #[error("invalid config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("malformed model snapshot: {0}")]
    Snapshot(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
