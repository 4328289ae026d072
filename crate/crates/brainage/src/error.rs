//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("age {0} outside supported range [0, 100]")]
    AgeOutOfRange(i64),

    #[error("target age {target} must be strictly greater than input age {input}")]
    AgeOrdering { input: u32, target: u32 },

    #[error("age code is not in prefix-of-ones form (first violation at position {0})")]
    MalformedAgeCode(usize),

    #[error("health code {0:?} does not map to any health state")]
    InvalidHealthCode(Vec<u8>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("degenerate volume: no intensity spread above zero")]
    DegenerateVolume,

    #[error("degenerate age range: a_min must be strictly below a_max")]
    DegenerateAgeRange,

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite value in {0}; aborting")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("failed to parse {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, detail: impl std::fmt::Display) -> Self {
        Error::Parse {
            what: what.into(),
            detail: detail.to_string(),
        }
    }
}
