use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("unsupported dtype {dtype} for parameter `{name}`")]
    UnsupportedDtype { name: String, dtype: String },

    #[error("unreadable checkpoint {}: {reason}", path.display())]
    Container { path: PathBuf, reason: String },

    #[error("malformed tokenizer file {}: {reason}", path.display())]
    Tokenizer { path: PathBuf, reason: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("token sequence is empty")]
    EmptySequence,

    #[error("sequence of {len} tokens exceeds the context window of {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token id {id} is outside the vocabulary of {vocab} entries")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid edge: {0}")]
    InvalidEdge(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("edge universes differ: {0}")]
    UniverseMismatch(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u64, expected: u64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corpus exhausted: wanted {wanted} samples, produced {produced}")]
    CorpusExhausted { wanted: usize, produced: usize },

    #[error("template error: {0}")]
    Template(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
