//! Similarity-distribution distillation: compress a frozen teacher
//! embedding into a small student by matching each input's
//! temperature-scaled similarity profile over a bank of anchor points.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`embedding`]: normalization, cosine scores, softmax, KL
//! - [`bank`]: FIFO anchor queue and momentum (EMA) encoder update
//! - [`model`]: small MLP student, manual backprop, SGD, checkpoints
//! - [`data`]: synthetic clustered dataset and file formats
//! - [`eval`]: nearest-neighbor, cluster-alignment, and linear-probe metrics
//! - [`distill`]: training loops for the distillation methods

pub mod bank;
pub mod data;
pub mod distill;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod model;

pub use embedding::{EmbeddingBatch, SimilarityDistribution};
pub use error::{Error, Result};
