//! The three evaluation protocols: nearest-neighbor classification,
//! cluster alignment (k-means plus Hungarian mapping), and a linear probe
//! on standardized features.

pub mod hungarian;
pub mod kmeans;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::embedding::{l2_normalize, softmax_rows, EmbeddingBatch};
use crate::error::{Error, Result};
use crate::model::{Activation, LayerSpec, LrSchedule, SgdState, StudentNetwork};

pub use hungarian::{hungarian_max, mapping_total};
pub use kmeans::{kmeans, ClusterAssignment};

/// Fraction of positions where prediction equals label.
pub fn accuracy(predictions: &[u32], labels: &[u32]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Classify each test point by majority vote among its `k_neighbors`
/// highest-cosine train points. Vote ties break toward the label holding
/// the nearer neighbor, then the lower train index. Returns predictions
/// and test accuracy.
pub fn knn_classify(
    train_emb: &EmbeddingBatch,
    train_labels: &[u32],
    test_emb: &EmbeddingBatch,
    test_labels: &[u32],
    k_neighbors: usize,
) -> Result<(Vec<u32>, f64)> {
    if train_emb.rows() == 0 {
        return Err(Error::EmptyTrainSet);
    }
    if !train_emb.is_normalized() || !test_emb.is_normalized() {
        return Err(Error::UnnormalizedBatch);
    }
    if train_labels.len() != train_emb.rows() {
        return Err(Error::LengthMismatch {
            left: train_emb.rows(),
            right: train_labels.len(),
        });
    }
    if test_labels.len() != test_emb.rows() {
        return Err(Error::LengthMismatch {
            left: test_emb.rows(),
            right: test_labels.len(),
        });
    }
    if train_emb.dim() != test_emb.dim() {
        return Err(Error::DimensionMismatch {
            expected: train_emb.dim(),
            actual: test_emb.dim(),
        });
    }
    if k_neighbors == 0 {
        return Err(Error::InvalidConfig(
            "k_neighbors must be at least 1".into(),
        ));
    }
    let k = k_neighbors.min(train_emb.rows());
    let scores = test_emb.data().dot(&train_emb.data().t());

    let mut predictions = Vec::with_capacity(test_emb.rows());
    for row in scores.rows() {
        let pred = if k == 1 {
            let mut best = 0usize;
            for i in 1..row.len() {
                if row[i] > row[best] {
                    best = i;
                }
            }
            train_labels[best]
        } else {
            let mut order: Vec<usize> = (0..row.len()).collect();
            let by_sim_then_index =
                |&a: &usize, &b: &usize| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b));
            order.select_nth_unstable_by(k - 1, by_sim_then_index);
            let mut top: Vec<usize> = order[..k].to_vec();
            top.sort_unstable_by(by_sim_then_index);

            // per candidate label: (count, best similarity, best index)
            let mut votes: Vec<(u32, usize, f64, usize)> = Vec::new();
            for &idx in &top {
                let label = train_labels[idx];
                match votes.iter_mut().find(|v| v.0 == label) {
                    Some(v) => v.1 += 1,
                    None => votes.push((label, 1, row[idx], idx)),
                }
            }
            votes
                .into_iter()
                .max_by(|a, b| {
                    a.1.cmp(&b.1)
                        .then(a.2.partial_cmp(&b.2).unwrap())
                        .then(b.3.cmp(&a.3))
                })
                .unwrap()
                .0
        };
        predictions.push(pred);
    }
    let acc = accuracy(&predictions, test_labels)?;
    Ok((predictions, acc))
}

/// Entry (r, c) = |cluster r ∩ category c| / |cluster r|; empty clusters
/// give all-zero rows.
pub fn alignment_matrix(
    assignment: &[usize],
    labels: &[u32],
    k: usize,
    num_classes: usize,
) -> Result<Array2<f64>> {
    if assignment.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: assignment.len(),
            right: labels.len(),
        });
    }
    let mut counts = Array2::<f64>::zeros((k, num_classes));
    let mut sizes = vec![0usize; k];
    for (&c, &l) in assignment.iter().zip(labels) {
        if c >= k || l as usize >= num_classes {
            return Err(Error::InconsistentInputs(format!(
                "cluster {c} or label {l} out of range ({k} clusters, {num_classes} classes)"
            )));
        }
        counts[[c, l as usize]] += 1.0;
        sizes[c] += 1;
    }
    for (r, &size) in sizes.iter().enumerate() {
        if size > 0 {
            let mut row = counts.row_mut(r);
            row.mapv_inplace(|v| v / size as f64);
        }
    }
    Ok(counts)
}

fn infer_num_classes(a: &[u32], b: &[u32]) -> usize {
    a.iter()
        .chain(b)
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(0)
}

/// Cluster-alignment accuracy: k-means on train embeddings, clusters
/// labeled by Hungarian-maximal alignment with train labels, val points
/// assigned to the nearest centroid by cosine. Unmapped clusters predict a
/// reserved label that never matches.
pub fn cluster_alignment_accuracy(
    train_emb: &EmbeddingBatch,
    train_labels: &[u32],
    val_emb: &EmbeddingBatch,
    val_labels: &[u32],
    k: usize,
    seed: u64,
) -> Result<f64> {
    let num_classes = infer_num_classes(train_labels, val_labels);
    let clustering = kmeans(train_emb, k, 300, seed)?;
    let align = alignment_matrix(&clustering.assignment, train_labels, k, num_classes)?;
    let mapping = hungarian_max(align.view())?;

    let sentinel = num_classes as u32;
    let centroid_norms: Vec<f64> = clustering
        .centroids
        .rows()
        .into_iter()
        .map(|c| c.dot(&c).sqrt())
        .collect();
    let dots = val_emb.data().dot(&clustering.centroids.t());
    let mut predictions = Vec::with_capacity(val_emb.rows());
    for row in dots.rows() {
        let mut best = 0usize;
        let mut best_cos = f64::NEG_INFINITY;
        for c in 0..k {
            let cos = if centroid_norms[c] > 0.0 {
                row[c] / centroid_norms[c]
            } else {
                f64::NEG_INFINITY
            };
            if cos > best_cos {
                best_cos = cos;
                best = c;
            }
        }
        predictions.push(mapping[best].map_or(sentinel, |cat| cat as u32));
    }
    accuracy(&predictions, val_labels)
}

/// Linear-probe training settings. Defaults follow the shared recipe:
/// lr 0.01 with x0.1 drops at epochs 15 and 30, 40 epochs, weight decay
/// 1e-4, momentum 0.9.
#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub lr: f64,
    pub epochs: usize,
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 40,
            milestones: vec![15, 30],
            lr_factor: 0.1,
            weight_decay: 1e-4,
            momentum: 0.9,
            batch_size: 256,
            seed: 0,
        }
    }
}

/// ℓ2-normalize rows, then shift and scale each dimension to zero mean and
/// unit variance using train statistics (σ floored at 1e-8). Returns the
/// transformed train and val matrices.
pub fn standardize_features(
    train: &EmbeddingBatch,
    val: &EmbeddingBatch,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if train.dim() != val.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            actual: val.dim(),
        });
    }
    if train.rows() == 0 {
        return Err(Error::EmptyTrainSet);
    }
    let train_n = l2_normalize(train)?.into_inner();
    let val_n = l2_normalize(val)?.into_inner();

    let n = train_n.nrows() as f64;
    let mean: Array1<f64> = train_n.sum_axis(Axis(0)) / n;
    let mut var = Array1::<f64>::zeros(train_n.ncols());
    for row in train_n.rows() {
        for (d, &v) in row.iter().enumerate() {
            let diff = v - mean[d];
            var[d] += diff * diff;
        }
    }
    var.mapv_inplace(|v| v / n);
    let std = var.mapv(|v| v.sqrt().max(1e-8));

    let apply = |mut m: Array2<f64>| -> Array2<f64> {
        for mut row in m.rows_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[d]) / std[d];
            }
        }
        m
    };
    Ok((apply(train_n), apply(val_n)))
}

/// Train a single linear layer with softmax cross-entropy on standardized
/// features and return top-1 val accuracy.
pub fn linear_probe(
    train_emb: &EmbeddingBatch,
    train_labels: &[u32],
    val_emb: &EmbeddingBatch,
    val_labels: &[u32],
    config: &ProbeConfig,
) -> Result<f64> {
    if train_labels.len() != train_emb.rows() || val_labels.len() != val_emb.rows() {
        return Err(Error::LengthMismatch {
            left: train_emb.rows(),
            right: train_labels.len(),
        });
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let (train_x, val_x) = standardize_features(train_emb, val_emb)?;
    let num_classes = infer_num_classes(train_labels, val_labels);
    let dim = train_x.ncols();

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(0);
    let specs = [LayerSpec::new(dim, num_classes, Activation::Identity)];
    let mut net = StudentNetwork::new(&specs, &mut init_rng)?;
    let mut sgd = SgdState::new(
        config.lr,
        config.momentum,
        config.weight_decay,
        net.n_params(),
    )?;
    let schedule = LrSchedule::new(config.lr, config.milestones.clone(), config.lr_factor)?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let n = train_x.nrows();
    let mut indices: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        sgd.lr = schedule.lr_at_epoch(epoch);
        indices.shuffle(&mut shuffle_rng);
        for chunk in indices.chunks(config.batch_size) {
            let batch = select_rows(train_x.view(), chunk);
            let (logits, cache) = net.forward(batch.view())?;
            let (probs, _) = softmax_rows(logits.data(), 1.0)?;
            let mut grad = probs;
            let scale = 1.0 / chunk.len() as f64;
            for (r, &i) in chunk.iter().enumerate() {
                grad[[r, train_labels[i] as usize]] -= 1.0;
            }
            grad.mapv_inplace(|v| v * scale);
            let grads = net.backward(&cache, grad.view())?;
            let mut params = net.params_flat();
            sgd.step(&mut params, &grads)?;
            net.set_params_flat(&params)?;
        }
    }

    let (logits, _) = net.forward(val_x.view())?;
    let predictions: Vec<u32> = logits
        .data()
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            for i in 1..row.len() {
                if row[i] > row[best] {
                    best = i;
                }
            }
            best as u32
        })
        .collect();
    accuracy(&predictions, val_labels)
}

pub(crate) fn select_rows(data: ArrayView2<'_, f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), data.ncols()));
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).assign(&data.row(i));
    }
    out
}

/// Write `metric,value` rows with LF endings and `.` decimals.
pub fn write_metrics_csv(path: &std::path::Path, rows: &[(&str, f64)]) -> Result<()> {
    use std::io::Write as IoWrite;
    let mut out = String::from("metric,value\n");
    for (name, value) in rows {
        out.push_str(&format!("{name},{value}\n"));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
