//! Shared input builders for the criterion benchmarks.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use simdistill_core::embedding::EmbeddingBatch;

/// Matrix of uniform scores in [-1, 1).
pub fn score_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0f64..1.0))
}

/// Row-normalized batch of random points on the unit sphere.
pub fn unit_batch(rows: usize, dim: usize, seed: u64) -> EmbeddingBatch {
    let mut m = score_matrix(rows, dim, seed);
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt().max(1e-12);
        row.mapv_inplace(|v| v / norm);
    }
    EmbeddingBatch::new_normalized(m).expect("rows are normalized")
}

/// Random labels in [0, classes).
pub fn random_labels(count: usize, classes: u32, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random_range(0..classes)).collect()
}
