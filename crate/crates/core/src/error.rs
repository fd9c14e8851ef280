use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped so callers (notably the CLI) can map them onto an
/// exit-code taxonomy: usage, data, or backend failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate (entity, attribute) pair at line {line}: ({entity}, {attribute})")]
    DuplicatePair {
        line: usize,
        entity: String,
        attribute: String,
    },

    #[error("empty field `{field}` at line {line}")]
    EmptyField { field: String, line: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty knowledge base")]
    EmptyKb,

    #[error("invalid doc id {0}")]
    InvalidDocId(usize),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("degenerate input: text has no character bigrams")]
    DegenerateEmbedding,

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("snapshot version mismatch: found {found}, expected {expected}")]
    SnapshotVersion { found: String, expected: String },

    #[error("template error: {0}")]
    Template(String),

    #[error("backend error in stage `{stage}`: {message}")]
    Backend { stage: String, message: String },

    #[error("replay cache miss for key {key} (stage `{tag}`)")]
    CacheMiss { key: String, tag: String },

    #[error("scripted backend has no entry for prompt (stage `{tag}`)")]
    ScriptMiss { tag: String },

    #[error("unparseable model output: {0}")]
    Unparseable(String),

    #[error("invalid rating: {0}")]
    InvalidRating(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the failure originated in a generation backend (transport,
    /// cache miss, script miss) rather than in local data handling.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::Backend { .. } | Error::CacheMiss { .. } | Error::ScriptMiss { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
