//! Distillation by similarity matching, plus the regression and
//! cluster-classification baselines.
//!
//! The main method trains the student so that each query's
//! temperature-scaled similarity distribution over a bank of anchors matches
//! the teacher's. Anchors are FIFO queue snapshots: the teacher queue holds
//! cached teacher embeddings; the student-side queue (two-queue variant)
//! holds outputs of a slowly moving EMA copy of the student. Gradients flow
//! only through the query embedding, never the anchors.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bank::{ema_update, AnchorQueue};
use crate::data::{augment, Dataset};
use crate::embedding::{
    cosine_scores, kl_divergence, kl_rows_mean, softmax_rows, softmax_temperature, EmbeddingBatch,
    SimilarityDistribution, ZERO_NORM_TOL,
};
use crate::error::{Error, Result};
use crate::eval::{knn_classify, select_rows};
use crate::model::{Activation, LayerSpec, LrSchedule, SgdState, StudentNetwork};

/// Training method variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ours1q,
    Ours2q,
    Reg,
    RegBn,
    Cc,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ours-1q" | "ours1q" => Ok(Method::Ours1q),
            "ours-2q" | "ours2q" => Ok(Method::Ours2q),
            "reg" => Ok(Method::Reg),
            "reg-bn" | "reg_bn" => Ok(Method::RegBn),
            "cc" => Ok(Method::Cc),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours1q => "ours-1q",
            Method::Ours2q => "ours-2q",
            Method::Reg => "reg",
            Method::RegBn => "reg-bn",
            Method::Cc => "cc",
        }
    }
}

/// Full training configuration shared by all methods.
#[derive(Debug, Clone)]
pub struct DistillConfig {
    pub method: Method,
    pub tau: f64,
    pub bank_capacity: usize,
    pub momentum_m: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub cc_k: usize,
    pub lr: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
    /// Std of the additive Gaussian input augmentation. `None` derives
    /// 0.1 times the mean per-dimension std of the train inputs.
    pub aug_sigma: Option<f64>,
    pub hidden_dim: usize,
    pub student_dim: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            method: Method::Ours2q,
            tau: 0.04,
            bank_capacity: 2048,
            momentum_m: 0.999,
            epochs: 30,
            batch_size: 256,
            seed: 0,
            cc_k: 40,
            lr: 0.01,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            // the full-scale recipe drops at 90 and 120 of 130 epochs;
            // these hit the same fractions of the 30-epoch default
            milestones: vec![21, 28],
            lr_factor: 0.2,
            aug_sigma: None,
            hidden_dim: 128,
            student_dim: 64,
        }
    }
}

impl DistillConfig {
    /// Validate fields that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 || self.tau.is_nan() {
            return Err(Error::NonPositiveTemperature { tau: self.tau });
        }
        if self.bank_capacity < self.batch_size {
            return Err(Error::BankSmallerThanBatch {
                bank: self.bank_capacity,
                batch: self.batch_size,
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.momentum_m) {
            return Err(Error::InvalidConfig(format!(
                "momentum_m = {} outside [0, 1]",
                self.momentum_m
            )));
        }
        if self.hidden_dim == 0 || self.student_dim == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        if self.method == Method::Cc && self.cc_k == 0 {
            return Err(Error::InvalidConfig("cc_k must be positive".into()));
        }
        Ok(())
    }
}

/// One per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub eval_nn_acc: Option<f64>,
}

/// Source of teacher embeddings, keyed by sample index. The bundled
/// implementation is a precomputed table; an on-the-fly encoder can plug in
/// through the same interface.
pub trait Teacher {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Normalized teacher embeddings for the given sample indices, in order.
    fn embed_rows(&self, indices: &[usize]) -> Result<EmbeddingBatch>;
}

/// Teacher backed by a cached embedding table.
pub struct CachedTeacher<'a> {
    cache: &'a EmbeddingBatch,
}

impl<'a> CachedTeacher<'a> {
    pub fn new(cache: &'a EmbeddingBatch) -> Result<Self> {
        if !cache.is_normalized() {
            return Err(Error::UnnormalizedBatch);
        }
        Ok(Self { cache })
    }
}

impl Teacher for CachedTeacher<'_> {
    fn dim(&self) -> usize {
        self.cache.dim()
    }

    fn len(&self) -> usize {
        self.cache.rows()
    }

    fn embed_rows(&self, indices: &[usize]) -> Result<EmbeddingBatch> {
        EmbeddingBatch::new_normalized(self.cache.select(indices))
    }
}

/// Per-epoch evaluation callback; receives the current network and returns
/// a score recorded as `eval_nn_acc`.
pub type EpochEvalFn<'a> = dyn Fn(&StudentNetwork) -> Result<f64> + 'a;

/// Temperature-scaled similarity distributions of one query pair over the
/// current anchor sets.
pub fn query_distributions(
    teacher_q: ArrayView1<'_, f64>,
    student_q: ArrayView1<'_, f64>,
    teacher_anchors: ArrayView2<'_, f64>,
    student_anchors: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<(SimilarityDistribution, SimilarityDistribution)> {
    if teacher_anchors.nrows() == 0 || student_anchors.nrows() == 0 {
        return Err(Error::EmptyAnchors);
    }
    if teacher_anchors.nrows() != student_anchors.nrows() {
        return Err(Error::LengthMismatch {
            left: teacher_anchors.nrows(),
            right: student_anchors.nrows(),
        });
    }
    let p_t = softmax_temperature(cosine_scores(teacher_q, teacher_anchors)?.view(), tau)?;
    let p_s = softmax_temperature(cosine_scores(student_q, student_anchors)?.view(), tau)?;
    Ok((p_t, p_s))
}

/// Mean KL divergence over a batch of query distribution pairs.
pub fn batch_loss(
    p_teacher: &[SimilarityDistribution],
    p_student: &[SimilarityDistribution],
) -> Result<f64> {
    if p_teacher.len() != p_student.len() {
        return Err(Error::LengthMismatch {
            left: p_teacher.len(),
            right: p_student.len(),
        });
    }
    if p_teacher.is_empty() {
        return Err(Error::InconsistentInputs("empty batch".into()));
    }
    let mut total = 0.0;
    for (p, q) in p_teacher.iter().zip(p_student) {
        total += kl_divergence(p, q)?;
    }
    Ok(total / p_teacher.len() as f64)
}

/// Gradient of one query's KL term with respect to the UNNORMALIZED student
/// query embedding. Chain: d/d(scores) = (p_s - p_t)/τ, then the anchor
/// matrix, then the normalization Jacobian (I - ŝŝᵀ)/‖s‖.
pub fn query_gradient(
    p_t: &SimilarityDistribution,
    p_s: &SimilarityDistribution,
    student_anchors: ArrayView2<'_, f64>,
    tau: f64,
    student_q_unnormalized: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    if p_t.len() != p_s.len() || p_s.len() != student_anchors.nrows() {
        return Err(Error::InconsistentInputs(format!(
            "distribution lengths {} / {} vs {} anchors",
            p_t.len(),
            p_s.len(),
            student_anchors.nrows()
        )));
    }
    if student_anchors.ncols() != student_q_unnormalized.len() {
        return Err(Error::DimensionMismatch {
            expected: student_anchors.ncols(),
            actual: student_q_unnormalized.len(),
        });
    }
    if tau <= 0.0 || tau.is_nan() {
        return Err(Error::NonPositiveTemperature { tau });
    }
    let norm = student_q_unnormalized.dot(&student_q_unnormalized).sqrt();
    if norm < ZERO_NORM_TOL {
        return Err(Error::ZeroNormRow { row: 0, norm });
    }
    let s_hat = student_q_unnormalized.mapv(|v| v / norm);

    let mut d_scores = Array1::zeros(p_s.len());
    for (i, (ps, pt)) in p_s.probs().iter().zip(p_t.probs().iter()).enumerate() {
        d_scores[i] = (ps - pt) / tau;
    }
    let d_s_hat = student_anchors.t().dot(&d_scores);
    let radial = d_s_hat.dot(&s_hat);
    Ok((0..s_hat.len())
        .map(|i| (d_s_hat[i] - radial * s_hat[i]) / norm)
        .collect())
}

fn normalize_rows_with_norms(data: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut out = data.to_owned();
    let mut norms = Vec::with_capacity(data.nrows());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm < ZERO_NORM_TOL {
            return Err(Error::ZeroNormRow { row: i, norm });
        }
        row.mapv_inplace(|v| v / norm);
        norms.push(norm);
    }
    Ok((out, norms))
}

fn default_aug_sigma(raw: ArrayView2<'_, f64>) -> f64 {
    let n = raw.nrows() as f64;
    if raw.is_empty() {
        return 0.0;
    }
    let mean = raw.sum_axis(Axis(0)) / n;
    let mut acc = 0.0;
    for d in 0..raw.ncols() {
        let var = raw
            .column(d)
            .iter()
            .map(|v| (v - mean[d]) * (v - mean[d]))
            .sum::<f64>()
            / n;
        acc += var.sqrt();
    }
    0.1 * acc / raw.ncols() as f64
}

/// Forward a batch through the network and ℓ2-normalize the embeddings.
pub fn embed_normalized(net: &StudentNetwork, raw: ArrayView2<'_, f64>) -> Result<EmbeddingBatch> {
    let (emb, _) = net.forward(raw)?;
    crate::embedding::l2_normalize(&emb)
}

/// One training step's loss and parameter gradient: the mean KL between
/// each teacher query's distribution over the teacher anchors and the
/// corresponding student embedding's distribution over the student anchors.
/// Gradients flow through the student query only, never the anchors.
pub fn batch_loss_and_param_gradient(
    net: &StudentNetwork,
    inputs: ArrayView2<'_, f64>,
    teacher_queries: ArrayView2<'_, f64>,
    teacher_anchors: ArrayView2<'_, f64>,
    student_anchors: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    if teacher_anchors.nrows() == 0 || student_anchors.nrows() == 0 {
        return Err(Error::EmptyAnchors);
    }
    if teacher_anchors.nrows() != student_anchors.nrows() {
        return Err(Error::LengthMismatch {
            left: teacher_anchors.nrows(),
            right: student_anchors.nrows(),
        });
    }
    if teacher_queries.nrows() != inputs.nrows() {
        return Err(Error::LengthMismatch {
            left: teacher_queries.nrows(),
            right: inputs.nrows(),
        });
    }

    let (emb, cache) = net.forward(inputs)?;
    let (emb_n, norms) = normalize_rows_with_norms(emb.data())?;

    let scores_t = teacher_queries.dot(&teacher_anchors.t());
    let scores_s = emb_n.dot(&student_anchors.t());
    let (p_t, lp_t) = softmax_rows(scores_t.view(), tau)?;
    let (p_s, lp_s) = softmax_rows(scores_s.view(), tau)?;
    let loss = kl_rows_mean(p_t.view(), lp_t.view(), lp_s.view());

    // d(loss)/d(scores) = (p_s - p_t)/τ per row, then through the anchors
    // and the normalization Jacobian; the 1/B of the batch mean folds into
    // the per-row scale
    let mut d_scores = p_s;
    d_scores -= &p_t;
    d_scores.mapv_inplace(|v| v / tau);
    let d_emb_n = d_scores.dot(&student_anchors);

    let b = inputs.nrows() as f64;
    let mut grad_emb = Array2::zeros(d_emb_n.raw_dim());
    for (r, norm) in norms.iter().enumerate() {
        let d_row = d_emb_n.row(r);
        let s_hat = emb_n.row(r);
        let radial = d_row.dot(&s_hat);
        let scale = 1.0 / (b * norm);
        for c in 0..d_row.len() {
            grad_emb[[r, c]] = (d_row[c] - radial * s_hat[c]) * scale;
        }
    }
    let grads = net.backward(&cache, grad_emb.view())?;
    Ok((loss, grads))
}

/// Train the student by similarity-distribution matching (one- or two-queue).
///
/// Per batch: read cached teacher rows, augment raw inputs for the student,
/// compute both distributions against the CURRENT queue snapshots, step the
/// optimizer, and only then enqueue this batch (teacher embeddings into the
/// teacher queue; key-encoder outputs of the same augmented inputs into the
/// student queue) and apply the EMA update. Steps are skipped (enqueue only)
/// until the teacher queue holds one full batch.
pub fn distill(
    raw: ArrayView2<'_, f64>,
    teacher: &dyn Teacher,
    mut net: StudentNetwork,
    config: &DistillConfig,
    epoch_eval: Option<&EpochEvalFn<'_>>,
) -> Result<(StudentNetwork, Vec<TrainRecord>)> {
    config.validate()?;
    let two_queue = match config.method {
        Method::Ours2q => true,
        Method::Ours1q => false,
        other => {
            return Err(Error::InvalidConfig(format!(
                "distill() handles ours-1q/ours-2q, not {}",
                other.as_str()
            )))
        }
    };
    let n = raw.nrows();
    if teacher.len() != n {
        return Err(Error::InconsistentInputs(format!(
            "{} raw rows vs {} teacher rows",
            n,
            teacher.len()
        )));
    }
    if net.input_dim() != raw.ncols() {
        return Err(Error::DimensionMismatch {
            expected: raw.ncols(),
            actual: net.input_dim(),
        });
    }
    if !two_queue && net.output_dim() != teacher.dim() {
        return Err(Error::DimensionMismatch {
            expected: teacher.dim(),
            actual: net.output_dim(),
        });
    }

    let aug_sigma = config.aug_sigma.unwrap_or_else(|| default_aug_sigma(raw));
    let mut teacher_queue = AnchorQueue::new(config.bank_capacity, teacher.dim())?;
    let mut student_queue = if two_queue {
        Some(AnchorQueue::new(config.bank_capacity, net.output_dim())?)
    } else {
        None
    };
    let mut key_params = if two_queue {
        Some(net.params_flat())
    } else {
        None
    };
    let mut key_net = if two_queue { Some(net.clone()) } else { None };

    let mut sgd = SgdState::new(
        config.lr,
        config.sgd_momentum,
        config.weight_decay,
        net.n_params(),
    )?;
    let schedule = LrSchedule::new(config.lr, config.milestones.clone(), config.lr_factor)?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(11);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed);
    aug_rng.set_stream(12);

    let warm_threshold = config.batch_size.min(n);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        sgd.lr = schedule.lr_at_epoch(epoch);
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;

        for chunk in indices.chunks(config.batch_size) {
            let teacher_batch = teacher.embed_rows(chunk)?;
            let aug = augment(select_rows(raw, chunk).view(), aug_sigma, &mut aug_rng);

            if teacher_queue.len() >= warm_threshold {
                let t_anchors = teacher_queue.as_matrix()?;
                let s_anchors = match &student_queue {
                    Some(q) => q.as_matrix()?,
                    None => t_anchors.clone(),
                };
                let (loss, grads) = batch_loss_and_param_gradient(
                    &net,
                    aug.view(),
                    teacher_batch.data(),
                    t_anchors.view(),
                    s_anchors.view(),
                    config.tau,
                )?;
                loss_sum += loss;
                steps += 1;
                let mut params = net.params_flat();
                sgd.step(&mut params, &grads)?;
                net.set_params_flat(&params)?;
            }

            teacher_queue.enqueue_batch(&teacher_batch)?;
            if let (Some(queue), Some(key), Some(kp)) =
                (&mut student_queue, &mut key_net, &mut key_params)
            {
                let key_emb = embed_normalized(key, aug.view())?;
                queue.enqueue_batch(&key_emb)?;
                ema_update(kp, &net.params_flat(), config.momentum_m)?;
                key.set_params_flat(kp)?;
            }
        }

        let mean_loss = if steps > 0 {
            loss_sum / steps as f64
        } else {
            0.0
        };
        let eval_nn_acc = match epoch_eval {
            Some(f) => Some(f(&net)?),
            None => None,
        };
        records.push(TrainRecord {
            epoch,
            mean_loss,
            eval_nn_acc,
        });
    }
    Ok((net, records))
}

/// MSE between student and teacher embedding batches, optionally after
/// per-dimension whitening of both sides with current-minibatch statistics
/// (ε = 1e-5). Returns the loss and its exact gradient with respect to the
/// student batch.
pub fn reg_loss_and_grad(
    student_emb: ArrayView2<'_, f64>,
    teacher_emb: ArrayView2<'_, f64>,
    use_bn: bool,
) -> Result<(f64, Array2<f64>)> {
    if student_emb.dim() != teacher_emb.dim() {
        return Err(Error::DimensionMismatch {
            expected: teacher_emb.ncols(),
            actual: student_emb.ncols(),
        });
    }
    let rows = student_emb.nrows();
    let cols = student_emb.ncols();
    if use_bn && rows < 2 {
        return Err(Error::BatchTooSmall {
            needed: 2,
            got: rows,
        });
    }
    let count = (rows * cols) as f64;

    if !use_bn {
        let mut grad = Array2::zeros(student_emb.raw_dim());
        let mut loss = 0.0;
        for ((g, &s), &t) in grad
            .iter_mut()
            .zip(student_emb.iter())
            .zip(teacher_emb.iter())
        {
            let diff = s - t;
            loss += diff * diff;
            *g = 2.0 * diff / count;
        }
        return Ok((loss / count, grad));
    }

    const EPS: f64 = 1e-5;
    let nf = rows as f64;
    let whiten = |m: ArrayView2<'_, f64>| -> (Array2<f64>, Array1<f64>) {
        let mean = m.sum_axis(Axis(0)) / nf;
        let mut var = Array1::<f64>::zeros(cols);
        for row in m.rows() {
            for (d, &v) in row.iter().enumerate() {
                let diff = v - mean[d];
                var[d] += diff * diff;
            }
        }
        var.mapv_inplace(|v| v / nf);
        let inv_std = var.mapv(|v| 1.0 / (v + EPS).sqrt());
        let mut out = m.to_owned();
        for mut row in out.rows_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[d]) * inv_std[d];
            }
        }
        (out, inv_std)
    };
    let (s_hat, s_inv_std) = whiten(student_emb);
    let (t_hat, _) = whiten(teacher_emb);

    let mut loss = 0.0;
    let mut d_hat = Array2::zeros(s_hat.raw_dim());
    for ((g, &s), &t) in d_hat.iter_mut().zip(s_hat.iter()).zip(t_hat.iter()) {
        let diff = s - t;
        loss += diff * diff;
        *g = 2.0 * diff / count;
    }
    loss /= count;

    // batch-norm backward per dimension:
    // dL/dx = inv_std * (δ - mean(δ) - x̂ * mean(δ ⊙ x̂))
    let mut grad = Array2::zeros(s_hat.raw_dim());
    for d in 0..cols {
        let delta = d_hat.column(d);
        let x_hat = s_hat.column(d);
        let mean_delta = delta.sum() / nf;
        let mean_delta_x = delta.dot(&x_hat) / nf;
        for r in 0..rows {
            grad[[r, d]] = s_inv_std[d] * (delta[r] - mean_delta - x_hat[r] * mean_delta_x);
        }
    }
    Ok((loss, grad))
}

/// Train the combined backbone + projection network to regress cached
/// teacher embeddings (optionally through minibatch whitening).
pub fn train_regression(
    raw: ArrayView2<'_, f64>,
    teacher: &dyn Teacher,
    mut net: StudentNetwork,
    config: &DistillConfig,
    use_bn: bool,
    epoch_eval: Option<&EpochEvalFn<'_>>,
) -> Result<(StudentNetwork, Vec<TrainRecord>)> {
    config.validate()?;
    let n = raw.nrows();
    if teacher.len() != n {
        return Err(Error::InconsistentInputs(format!(
            "{} raw rows vs {} teacher rows",
            n,
            teacher.len()
        )));
    }
    if net.output_dim() != teacher.dim() {
        return Err(Error::DimensionMismatch {
            expected: teacher.dim(),
            actual: net.output_dim(),
        });
    }
    let aug_sigma = config.aug_sigma.unwrap_or_else(|| default_aug_sigma(raw));
    let mut sgd = SgdState::new(
        config.lr,
        config.sgd_momentum,
        config.weight_decay,
        net.n_params(),
    )?;
    let schedule = LrSchedule::new(config.lr, config.milestones.clone(), config.lr_factor)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(11);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed);
    aug_rng.set_stream(12);

    let mut indices: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        sgd.lr = schedule.lr_at_epoch(epoch);
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in indices.chunks(config.batch_size) {
            if use_bn && chunk.len() < 2 {
                continue;
            }
            let teacher_batch = teacher.embed_rows(chunk)?;
            let aug = augment(select_rows(raw, chunk).view(), aug_sigma, &mut aug_rng);
            let (emb, cache) = net.forward(aug.view())?;
            let (loss, grad) = reg_loss_and_grad(emb.data(), teacher_batch.data(), use_bn)?;
            loss_sum += loss;
            steps += 1;
            let grads = net.backward(&cache, grad.view())?;
            let mut params = net.params_flat();
            sgd.step(&mut params, &grads)?;
            net.set_params_flat(&params)?;
        }
        let mean_loss = if steps > 0 {
            loss_sum / steps as f64
        } else {
            0.0
        };
        let eval_nn_acc = match epoch_eval {
            Some(f) => Some(f(&net)?),
            None => None,
        };
        records.push(TrainRecord {
            epoch,
            mean_loss,
            eval_nn_acc,
        });
    }
    Ok((net, records))
}

/// Quantize the teacher cache into `k` pseudo-classes with seeded k-means.
pub fn cc_prepare(teacher_cache: &EmbeddingBatch, k: usize, seed: u64) -> Result<Vec<u32>> {
    let clustering = crate::eval::kmeans(teacher_cache, k, 300, seed)?;
    Ok(clustering.assignment.iter().map(|&c| c as u32).collect())
}

/// Train the combined backbone + classification head to predict pseudo-labels
/// with softmax cross-entropy.
pub fn cc_train(
    raw: ArrayView2<'_, f64>,
    pseudo_labels: &[u32],
    mut net: StudentNetwork,
    config: &DistillConfig,
    epoch_eval: Option<&EpochEvalFn<'_>>,
) -> Result<(StudentNetwork, Vec<TrainRecord>)> {
    config.validate()?;
    let n = raw.nrows();
    if pseudo_labels.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: pseudo_labels.len(),
        });
    }
    let k = net.output_dim();
    if let Some(&bad) = pseudo_labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::InconsistentInputs(format!(
            "pseudo-label {bad} outside head size {k}"
        )));
    }
    let aug_sigma = config.aug_sigma.unwrap_or_else(|| default_aug_sigma(raw));
    let mut sgd = SgdState::new(
        config.lr,
        config.sgd_momentum,
        config.weight_decay,
        net.n_params(),
    )?;
    let schedule = LrSchedule::new(config.lr, config.milestones.clone(), config.lr_factor)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(11);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed);
    aug_rng.set_stream(12);

    let mut indices: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        sgd.lr = schedule.lr_at_epoch(epoch);
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in indices.chunks(config.batch_size) {
            let aug = augment(select_rows(raw, chunk).view(), aug_sigma, &mut aug_rng);
            let (logits, cache) = net.forward(aug.view())?;
            let (probs, log_probs) = softmax_rows(logits.data(), 1.0)?;
            let b = chunk.len() as f64;
            let mut loss = 0.0;
            let mut grad = probs;
            for (r, &i) in chunk.iter().enumerate() {
                let label = pseudo_labels[i] as usize;
                loss -= log_probs[[r, label]];
                grad[[r, label]] -= 1.0;
            }
            loss_sum += loss / b;
            steps += 1;
            grad.mapv_inplace(|v| v / b);
            let grads = net.backward(&cache, grad.view())?;
            let mut params = net.params_flat();
            sgd.step(&mut params, &grads)?;
            net.set_params_flat(&params)?;
        }
        let mean_loss = if steps > 0 {
            loss_sum / steps as f64
        } else {
            0.0
        };
        let eval_nn_acc = match epoch_eval {
            Some(f) => Some(f(&net)?),
            None => None,
        };
        records.push(TrainRecord {
            epoch,
            mean_loss,
            eval_nn_acc,
        });
    }
    Ok((net, records))
}

/// Layer shapes of the student backbone.
pub fn backbone_specs(input_dim: usize, hidden_dim: usize, student_dim: usize) -> [LayerSpec; 2] {
    [
        LayerSpec::new(input_dim, hidden_dim, Activation::Relu),
        LayerSpec::new(hidden_dim, student_dim, Activation::Identity),
    ]
}

const BACKBONE_LAYERS: usize = 2;

/// Result of a full training run.
pub struct RunOutput {
    pub net: StudentNetwork,
    pub records: Vec<TrainRecord>,
    pub nn_acc: f64,
}

/// Train with the configured method on the train split and report final
/// 1-NN val accuracy of the student embeddings. `eval_per_epoch` fills the
/// `eval_nn_acc` column of every record.
pub fn run(
    train: &Dataset,
    val: &Dataset,
    config: &DistillConfig,
    eval_per_epoch: bool,
) -> Result<RunOutput> {
    config.validate()?;
    let teacher = CachedTeacher::new(&train.teacher_cache)?;
    let input_dim = train.raw.ncols();

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(10);

    let nn_eval = |net: &StudentNetwork| -> Result<f64> {
        let train_emb = embed_normalized(net, train.raw.view())?;
        let val_emb = embed_normalized(net, val.raw.view())?;
        let (_, acc) = knn_classify(&train_emb, &train.labels, &val_emb, &val.labels, 1)?;
        Ok(acc)
    };
    let backbone_eval = |net: &StudentNetwork| -> Result<f64> {
        let mut backbone = net.clone();
        backbone.truncate(BACKBONE_LAYERS)?;
        nn_eval(&backbone)
    };

    let (net, records) = match config.method {
        Method::Ours1q | Method::Ours2q => {
            if config.method == Method::Ours1q && config.student_dim != teacher.dim() {
                return Err(Error::DimensionMismatch {
                    expected: teacher.dim(),
                    actual: config.student_dim,
                });
            }
            let specs = backbone_specs(input_dim, config.hidden_dim, config.student_dim);
            let net = StudentNetwork::new(&specs, &mut init_rng)?;
            let hook: Option<&EpochEvalFn<'_>> = if eval_per_epoch { Some(&nn_eval) } else { None };
            distill(train.raw.view(), &teacher, net, config, hook)?
        }
        Method::Reg | Method::RegBn => {
            let mut specs =
                backbone_specs(input_dim, config.hidden_dim, config.student_dim).to_vec();
            specs.push(LayerSpec::new(
                config.student_dim,
                teacher.dim(),
                Activation::Identity,
            ));
            let net = StudentNetwork::new(&specs, &mut init_rng)?;
            let hook: Option<&EpochEvalFn<'_>> = if eval_per_epoch {
                Some(&backbone_eval)
            } else {
                None
            };
            let use_bn = config.method == Method::RegBn;
            let (mut trained, records) =
                train_regression(train.raw.view(), &teacher, net, config, use_bn, hook)?;
            trained.truncate(BACKBONE_LAYERS)?;
            (trained, records)
        }
        Method::Cc => {
            let pseudo = cc_prepare(&train.teacher_cache, config.cc_k, config.seed)?;
            let mut specs =
                backbone_specs(input_dim, config.hidden_dim, config.student_dim).to_vec();
            specs.push(LayerSpec::new(
                config.student_dim,
                config.cc_k,
                Activation::Identity,
            ));
            let net = StudentNetwork::new(&specs, &mut init_rng)?;
            let hook: Option<&EpochEvalFn<'_>> = if eval_per_epoch {
                Some(&backbone_eval)
            } else {
                None
            };
            let (mut trained, records) = cc_train(train.raw.view(), &pseudo, net, config, hook)?;
            trained.truncate(BACKBONE_LAYERS)?;
            (trained, records)
        }
    };

    let nn_acc = nn_eval(&net)?;
    Ok(RunOutput {
        net,
        records,
        nn_acc,
    })
}

/// Write per-epoch records: header `epoch,mean_loss,nn_acc`, one row per
/// epoch, LF endings. The nn_acc field is empty when not evaluated.
pub fn write_train_csv(path: &std::path::Path, records: &[TrainRecord]) -> Result<()> {
    use std::io::Write as IoWrite;
    let mut out = String::from("epoch,mean_loss,nn_acc\n");
    for r in records {
        match r.eval_nn_acc {
            Some(acc) => out.push_str(&format!("{},{},{}\n", r.epoch, r.mean_loss, acc)),
            None => out.push_str(&format!("{},{},\n", r.epoch, r.mean_loss)),
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
