use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A tree document did not match the interchange schema.
    #[error("tree format error at {path}: {message}")]
    TreeFormat { path: String, message: String },

    /// A tree violated a structural invariant (e.g. a leaf with children).
    #[error("structural error at {path}: {message}")]
    Structure { path: String, message: String },

    #[error("unbalanced tags: {0}")]
    Unbalanced(String),

    #[error("placeholder count {placeholders} does not match string table length {table}")]
    StringTableMismatch { placeholders: usize, table: usize },

    #[error("unknown grammar `{0}`")]
    UnknownGrammar(String),

    #[error("parser failure: {0}")]
    Parser(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("input too long: {len} tokens exceeds limit {max}")]
    Length { len: usize, max: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("training diverged: {0}")]
    Training(String),

    /// A scorer returned a distribution that does not normalize.
    #[error("scorer contract violated: {0}")]
    ScorerContract(String),

    #[error("checker unavailable: {0}")]
    CheckerUnavailable(String),

    #[error("checker configuration error: {0}")]
    CheckerConfig(String),

    #[error("{path}:{line}: {message}")]
    Corpus {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("bridge error: {0}")]
    Bridge(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
