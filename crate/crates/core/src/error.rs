use thiserror::Error;

/// Errors produced anywhere in the reduction pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("document is empty")]
    EmptyDocument,

    #[error("invalid document: {0}")]
    InvalidDocument(String),

    #[error("span [{start}, {end}) is out of range for a document of {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("spans must be sorted, non-empty and disjoint")]
    UnsortedSpans,

    #[error("chunk of {len} tokens exceeds the default chunk size {default}")]
    InvalidChunk { len: usize, default: usize },

    #[error("per-chunk scores do not match the chunk partition: {0}")]
    PartitionMismatch(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("invalid budget: {0}")]
    InvalidBudget(String),

    #[error("prompt of {needed} tokens exceeds the provider context window of {window}")]
    ContextOverflow { needed: usize, window: usize },

    #[error("attention provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("provider protocol error: {0}")]
    Protocol(String),

    #[error("no windows to select from")]
    EmptySelection,

    #[error("retrieval index has no chunks for document {0:?}")]
    EmptyIndex(String),

    #[error("table row {row} has {got} cells, expected {expected}")]
    RaggedTable { row: usize, got: usize, expected: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
