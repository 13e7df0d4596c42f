use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: shape {shape:?} implies {expected} elements, got {actual}")]
    BadTensor {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("empty instance batch")]
    EmptyBatch,

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("chunk size {chunk_size} out of range for bag of {bag_size} instances")]
    BadChunkSize { chunk_size: usize, bag_size: usize },

    #[error("non-finite gradient in tensor '{name}'")]
    NonFiniteGradient { name: String },

    #[error("AUC undefined: labels contain a single class")]
    AucUndefined,

    #[error("empty pool")]
    EmptyPool,

    #[error("insufficient pool for split '{split}': need {needed} {what}, have {available}")]
    InsufficientPool {
        split: &'static str,
        what: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: bad IDX magic 0x{found:08x}, expected 0x{expected:08x}")]
    IdxMagic {
        path: String,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated at byte {offset}, needed {needed} more bytes")]
    Truncated {
        path: String,
        offset: usize,
        needed: usize,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
