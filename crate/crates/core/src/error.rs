use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid symbol {character:?} at position {position}")]
    InvalidSymbol { position: usize, character: char },

    #[error("sequence of length {len} does not fit in {capacity} rows")]
    TooLong { len: usize, capacity: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("failed to parse {what}: {reason}")]
    Parse { what: String, reason: String },

    #[error("schema violation in field `{field}`: {reason}")]
    SchemaViolation { field: String, reason: String },

    #[error("unknown ECC scheme `{0}`")]
    UnknownScheme(String),

    #[error("ECC scheme {scheme} cannot be applied to a sequence of length {len}")]
    EccPrecondition { scheme: String, len: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("designs {first} and {second} share the same prefix")]
    DuplicatePrefix { first: usize, second: usize },

    #[error("design {index} is shorter than the prefix length {prefix_len}")]
    DesignTooShort { index: usize, prefix_len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch for {what}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite activation after layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("training diverged at epoch {epoch}, batch {batch} (batch seed {batch_seed:#018x}): {source}")]
    Diverged {
        epoch: usize,
        batch: usize,
        batch_seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown cluster id {0}")]
    UnknownClusterId(usize),

    #[error("no clusters to evaluate")]
    NoClustersTested,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(field: &str, reason: impl Into<String>) -> Self {
        Error::SchemaViolation {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
