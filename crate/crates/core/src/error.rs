use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the retrieval, fusion, evaluation and captioning stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version: {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("trailing bytes: {0} unread bytes after payload")]
    TrailingBytes(usize),

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("row {id} is flagged normalized but has L2 norm {norm}")]
    NotNormalized { id: String, norm: f64 },

    #[error("unknown flag bits: {0:#x}")]
    UnknownFlags(u32),

    #[error("{0} longer than 65535 bytes")]
    TooLong(String),

    #[error("zero-norm row: {0}")]
    ZeroNormRow(String),

    #[error("non-finite value in row {id} at column {column}")]
    NonFinite { id: String, column: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("invalid ranked list: {0}")]
    InvalidRankedList(String),

    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("mismatched query ids: {0:?} vs {1:?}")]
    MismatchedQuery(String, String),

    #[error("unknown model_id: {0}")]
    UnknownModel(String),

    #[error("empty ranked list for model {0}")]
    EmptyList(String),

    #[error("empty relevant set for query {0}")]
    EmptyRelevant(String),

    #[error("duplicate query_id: {0}")]
    DuplicateQuery(String),

    #[error("query not in ground truth: {0}")]
    UnknownQuery(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty candidate caption for query {0}")]
    EmptyCandidate(String),

    #[error("no references for query {0}")]
    NoReferences(String),

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("dangling article_id: {0}")]
    DanglingArticle(String),

    #[error("duplicate image_id: {0}")]
    DuplicateImage(String),

    #[error("duplicate article_id: {0}")]
    DuplicateArticle(String),

    #[error("image not in catalog: {0}")]
    UnmappedImage(String),

    #[error("empty article text")]
    EmptyArticle,

    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("invalid endpoint config: {0}")]
    InvalidEndpoint(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport {
        attempts: u32,
        status: Option<u16>,
        message: String,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("caption empty after post-processing")]
    EmptyCaption,

    #[error("{context}: line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, line: usize, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            line,
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
