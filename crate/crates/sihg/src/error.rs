use std::path::PathBuf;

/// Errors surfaced by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("state error: {0}")]
    State(String),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code per the CLI contract: 2 usage/input, 3 data/state, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Io { .. }
            | Error::Config(_)
            | Error::Dimension(_) => 2,
            Error::Sampling(_) | Error::Contract(_) | Error::State(_) | Error::Serde(_) => 3,
            Error::Numeric(_) => 4,
        }
    }

    /// Stable machine-readable name for error envelopes.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
            Error::Dimension(_) => "dimension",
            Error::Numeric(_) => "numeric",
            Error::Sampling(_) => "sampling",
            Error::Contract(_) => "contract",
            Error::State(_) => "state",
            Error::Serde(_) => "serde",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
