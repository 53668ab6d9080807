//! Anchor memory: a fixed-capacity FIFO queue of unit-norm embeddings
//! plus the exponential-moving-average update for the key encoder.
//!
//! The training loop owns each queue. Snapshots from [`AnchorQueue::as_matrix`]
//! are owned copies, so later enqueues never mutate them.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};

use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};

/// Fixed-capacity FIFO buffer of unit-norm anchor embeddings, oldest first.
#[derive(Debug, Clone)]
pub struct AnchorQueue {
    capacity: usize,
    dim: usize,
    entries: VecDeque<Array1<f64>>,
}

impl AnchorQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::InvalidCapacity);
        }
        Ok(Self {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity.min(1 << 20)),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Append the batch rows in order, evicting the oldest entries so the
    /// length never exceeds capacity. The batch must be marked normalized.
    pub fn enqueue_batch(&mut self, batch: &EmbeddingBatch) -> Result<()> {
        if !batch.is_normalized() {
            return Err(Error::UnnormalizedBatch);
        }
        if batch.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: batch.dim(),
            });
        }
        for row in batch.data().rows() {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(row.to_owned());
        }
        Ok(())
    }

    /// Snapshot of the current contents, oldest first.
    pub fn as_matrix(&self) -> Result<Array2<f64>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyQueue);
        }
        let mut out = Array2::zeros((self.entries.len(), self.dim));
        for (i, row) in self.entries.iter().enumerate() {
            out.row_mut(i).assign(row);
        }
        Ok(out)
    }
}

/// In-place EMA: each key parameter becomes `m * key + (1 - m) * student`.
pub fn ema_update(key_params: &mut [f64], student_params: &[f64], m: f64) -> Result<()> {
    if key_params.len() != student_params.len() {
        return Err(Error::LengthMismatch {
            left: key_params.len(),
            right: student_params.len(),
        });
    }
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InconsistentInputs(format!(
            "momentum m = {m} outside [0, 1]"
        )));
    }
    for (k, &s) in key_params.iter_mut().zip(student_params) {
        *k = m * *k + (1.0 - m) * s;
    }
    Ok(())
}
