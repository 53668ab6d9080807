//! Seeded k-means with k-means++ initialization and Lloyd iterations.
//!
//! Runs on ℓ2-normalized inputs, where squared Euclidean distance is a
//! monotone function of cosine similarity, so this clusters by cosine.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};

/// Result of one k-means run.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia recorded after each assignment phase, first to last.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(data: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let mut chosen = vec![false; n];

    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    chosen[first] = true;

    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(data.row(i), centroids.row(0)))
        .collect();

    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // all remaining mass zero (duplicate-heavy data): take the
            // lowest unchosen index for determinism
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        centroids.row_mut(c).assign(&data.row(next));
        chosen[next] = true;
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), centroids.row(c)));
        }
    }
    centroids
}

/// Cluster normalized embeddings into `k` groups.
///
/// Lloyd iterations stop at an assignment fixpoint or after `max_iters`.
/// An empty cluster is re-seeded with the point farthest from its assigned
/// centroid, which strictly lowers inertia, so the recorded history stays
/// non-increasing.
pub fn kmeans(
    embeddings: &EmbeddingBatch,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    if !embeddings.is_normalized() {
        return Err(Error::UnnormalizedBatch);
    }
    let n = embeddings.rows();
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, samples: n });
    }
    let data = embeddings.data();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(data, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut inertia_history = Vec::new();

    for _ in 0..max_iters.max(1) {
        // assignment phase: squared distance via the expansion
        // |x - c|^2 = |x|^2 - 2 x.c + |c|^2 computed with one matmul
        let dots = data.dot(&centroids.t());
        let c_norms: Array1<f64> = centroids.rows().into_iter().map(|c| c.dot(&c)).collect();
        let x_norms: Array1<f64> = data.rows().into_iter().map(|x| x.dot(&x)).collect();
        let mut new_assignment = Vec::with_capacity(n);
        let mut inertia = 0.0;
        for i in 0..n {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = x_norms[i] - 2.0 * dots[[i, c]] + c_norms[c];
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            inertia += best_d.max(0.0);
            new_assignment.push(best);
        }
        inertia_history.push(inertia);
        if new_assignment == assignment {
            break;
        }
        assignment = new_assignment;

        // update phase
        let mut sums = Array2::<f64>::zeros((k, data.ncols()));
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            let mut row = sums.row_mut(c);
            row += &data.row(i);
            counts[c] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mut row = sums.row_mut(c);
                row.mapv_inplace(|v| v / count as f64);
                centroids.row_mut(c).assign(&sums.row(c));
            }
        }
        // re-seed empty clusters with the globally farthest point
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        let mut stolen = vec![false; n];
        for c in empty {
            let mut far = None;
            let mut far_d = -1.0;
            for i in 0..n {
                if stolen[i] {
                    continue;
                }
                let d = sq_dist(data.row(i), centroids.row(assignment[i]));
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
            if let Some(i) = far {
                centroids.row_mut(c).assign(&data.row(i));
                assignment[i] = c;
                stolen[i] = true;
            }
        }
    }

    // final inertia consistent with the returned assignment and centroids
    let inertia: f64 = (0..n)
        .map(|i| sq_dist(data.row(i), centroids.row(assignment[i])))
        .sum();
    Ok(ClusterAssignment {
        centroids,
        assignment,
        inertia,
        inertia_history,
    })
}
