//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has near-zero norm ({norm:.3e}); cannot normalize")]
    ZeroNormRow { row: usize, norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("temperature must be positive, got {tau}")]
    NonPositiveTemperature { tau: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("queue capacity must be at least 1")]
    InvalidCapacity,

    #[error("batch must be l2-normalized before enqueueing")]
    UnnormalizedBatch,

    #[error("queue is empty")]
    EmptyQueue,

    #[error("activation cache does not match this network or gradient shape")]
    StaleCache,

    #[error("invalid network architecture: {0}")]
    InvalidArchitecture(String),

    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),

    #[error("anchor set is empty")]
    EmptyAnchors,

    #[error("memory bank capacity {bank} is smaller than batch size {batch}")]
    BankSmallerThanBatch { bank: usize, batch: usize },

    #[error("batch too small: need at least {needed} rows, got {got}")]
    BatchTooSmall { needed: usize, got: usize },

    #[error("k={k} exceeds the number of samples ({samples})")]
    KTooLarge { k: usize, samples: usize },

    #[error("training set is empty")]
    EmptyTrainSet,

    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("file ends before the declared payload")]
    TruncatedFile,

    #[error("file size does not match the declared payload")]
    SizeMismatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
