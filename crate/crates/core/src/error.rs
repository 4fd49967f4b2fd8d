use std::io;

use thiserror::Error;

use crate::types::Action;

/// Errors raised across the extraction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("span index {index} out of bounds for sentence of length {len}")]
    OutOfBounds { index: usize, len: usize },

    #[error("aspect and opinion spans overlap in one triplet")]
    Overlap,

    #[error("invalid sentence: {0}")]
    InvalidSentence(String),

    #[error("action {action} is not legal in the current state")]
    IllegalAction { action: Action },

    #[error("step cap of {cap} exceeded")]
    StepCapExceeded { cap: usize },

    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("line {line}: index list {indices:?} is not contiguous")]
    NonContiguous { line: usize, indices: Vec<usize> },

    #[error("cannot fuse corpora with different splits ({0} vs {1})")]
    MixedSplits(String, String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("no external vector for sentence {sentence} token {token}")]
    MissingVector { sentence: String, token: usize },

    #[error("action embedding row {action} has zero norm")]
    ZeroVectorEmbedding { action: usize },

    #[error("corpus contains no sentences")]
    EmptyCorpus,

    #[error("sentence ids do not align: {0} vs {1}")]
    IdMismatch(String, String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable upper-case name used on the command line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::OutOfBounds { .. } => "OUT_OF_BOUNDS",
            Error::Overlap => "OVERLAP",
            Error::InvalidSentence(_) => "INVALID_SENTENCE",
            Error::IllegalAction { .. } => "ILLEGAL_ACTION",
            Error::StepCapExceeded { .. } => "STEP_CAP_EXCEEDED",
            Error::Parse { .. } => "PARSE_ERROR",
            Error::NonContiguous { .. } => "NONCONTIGUOUS",
            Error::MixedSplits(..) => "MIXED_SPLITS",
            Error::DimMismatch { .. } => "DIM_MISMATCH",
            Error::MissingVector { .. } => "MISSING_VECTOR",
            Error::ZeroVectorEmbedding { .. } => "ZERO_VECTOR_EMBEDDING",
            Error::EmptyCorpus => "EMPTY_CORPUS",
            Error::IdMismatch(..) => "ID_MISMATCH",
            Error::Config(_) => "CONFIG_ERROR",
            Error::Checkpoint(_) => "CHECKPOINT_ERROR",
            Error::Io(_) => "IO_ERROR",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
