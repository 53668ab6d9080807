//! Numerical primitives: l2 normalization, cosine similarity,
//! temperature-scaled softmax, and KL divergence.
//!
//! All math runs in f64. Every function here is pure.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Norm tolerance for a row to count as unit-length.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Rows below this norm cannot be normalized meaningfully.
pub const ZERO_NORM_TOL: f64 = 1e-12;

/// A batch of embedding vectors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    data: Array2<f64>,
    normalized: bool,
}

impl EmbeddingBatch {
    /// Wrap a raw matrix as an unnormalized batch. Rejects non-finite entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "embedding batch",
            });
        }
        Ok(Self {
            data,
            normalized: false,
        })
    }

    /// Wrap a matrix whose rows are already unit-norm (within [`UNIT_NORM_TOL`]).
    pub fn new_normalized(data: Array2<f64>) -> Result<Self> {
        let batch = Self::new(data)?;
        for (i, row) in batch.data.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::ZeroNormRow { row: i, norm });
            }
        }
        Ok(Self {
            normalized: true,
            ..batch
        })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    /// Embedding dimensionality (columns).
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    /// Copy out the rows at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.dim()));
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).assign(&self.data.row(i));
        }
        out
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

/// A probability distribution over the current anchor set.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDistribution {
    probs: Array1<f64>,
}

impl SimilarityDistribution {
    /// Validates entries in [0, 1] summing to 1 within 1e-9.
    pub fn new(probs: Array1<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::NonFinite {
                context: "similarity distribution entries",
            });
        }
        let sum: f64 = probs.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InconsistentInputs(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> ArrayView1<'_, f64> {
        self.probs.view()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Divide every row by its Euclidean norm. The input is left untouched.
///
/// Fails with [`Error::ZeroNormRow`] when a row's norm is below
/// [`ZERO_NORM_TOL`], which signals a degenerate embedding upstream.
pub fn l2_normalize(batch: &EmbeddingBatch) -> Result<EmbeddingBatch> {
    let normalized = l2_normalize_rows(batch.data())?;
    Ok(EmbeddingBatch {
        data: normalized,
        normalized: true,
    })
}

/// Row-wise l2 normalization on a bare matrix.
pub fn l2_normalize_rows(data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = data.to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm < ZERO_NORM_TOL {
            return Err(Error::ZeroNormRow { row: i, norm });
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

/// Cosine similarity between one unit query and each unit anchor row.
pub fn cosine_scores(
    query: ArrayView1<'_, f64>,
    anchors: ArrayView2<'_, f64>,
) -> Result<Array1<f64>> {
    if query.len() != anchors.ncols() {
        return Err(Error::DimensionMismatch {
            expected: anchors.ncols(),
            actual: query.len(),
        });
    }
    Ok(anchors.dot(&query))
}

/// Cosine similarity between every query row and every anchor row.
///
/// Returns a `queries.nrows() x anchors.nrows()` score matrix.
pub fn cosine_scores_all(
    queries: ArrayView2<'_, f64>,
    anchors: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if queries.ncols() != anchors.ncols() {
        return Err(Error::DimensionMismatch {
            expected: anchors.ncols(),
            actual: queries.ncols(),
        });
    }
    Ok(queries.dot(&anchors.t()))
}

/// Temperature-scaled softmax over a score vector.
///
/// Subtracts the max score before exponentiation so large `score/tau`
/// ratios cannot overflow.
pub fn softmax_temperature(
    scores: ArrayView1<'_, f64>,
    tau: f64,
) -> Result<SimilarityDistribution> {
    let scores = scores.insert_axis(Axis(0));
    let (probs, _) = softmax_rows(scores, tau)?;
    Ok(SimilarityDistribution {
        probs: probs.index_axis_move(Axis(0), 0),
    })
}

/// Row-wise temperature softmax. Returns `(probs, log_probs)`.
///
/// The log-probabilities come from the same max-subtracted pass, so KL
/// terms can be formed without re-taking entrywise logarithms.
pub fn softmax_rows(scores: ArrayView2<'_, f64>, tau: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    if tau <= 0.0 || tau.is_nan() {
        return Err(Error::NonPositiveTemperature { tau });
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "scores" });
    }
    let mut probs = Array2::zeros(scores.raw_dim());
    let mut log_probs = Array2::zeros(scores.raw_dim());
    for ((row, mut p), mut lp) in scores
        .rows()
        .into_iter()
        .zip(probs.rows_mut())
        .zip(log_probs.rows_mut())
    {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v)) / tau;
        let mut sum = 0.0;
        for (j, &s) in row.iter().enumerate() {
            let e = (s / tau - max).exp();
            p[j] = e;
            sum += e;
        }
        let log_sum = sum.ln();
        for (j, &s) in row.iter().enumerate() {
            p[j] /= sum;
            lp[j] = s / tau - max - log_sum;
        }
    }
    Ok((probs, log_probs))
}

/// KL divergence `sum_j p_j * ln(p_j / q_j)` with the `0 * ln(0/q) = 0`
/// convention for exact zeros in `p`.
pub fn kl_divergence(p: &SimilarityDistribution, q: &SimilarityDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut sum = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(q.probs.iter()) {
        if pi > 0.0 {
            sum += pi * (pi.ln() - qi.ln());
        }
    }
    Ok(sum)
}

/// Mean KL divergence over rows, given teacher probabilities plus the
/// log-probabilities of both sides as produced by [`softmax_rows`].
pub fn kl_rows_mean(
    p_teacher: ArrayView2<'_, f64>,
    log_p_teacher: ArrayView2<'_, f64>,
    log_p_student: ArrayView2<'_, f64>,
) -> f64 {
    let n = p_teacher.nrows() as f64;
    let mut total = 0.0;
    for ((p, lt), ls) in p_teacher
        .rows()
        .into_iter()
        .zip(log_p_teacher.rows())
        .zip(log_p_student.rows())
    {
        for ((&pi, &lti), &lsi) in p.iter().zip(lt.iter()).zip(ls.iter()) {
            if pi > 0.0 {
                total += pi * (lti - lsi);
            }
        }
    }
    total / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array1, Array2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalize_three_four_five() {
        let batch = EmbeddingBatch::new(arr2(&[[3.0, 4.0]])).unwrap();
        let out = l2_normalize(&batch).unwrap();
        assert!((out.row(0)[0] - 0.6).abs() < 1e-15);
        assert!((out.row(0)[1] - 0.8).abs() < 1e-15);
        assert!(out.is_normalized());
        // input untouched
        assert_eq!(batch.row(0)[0], 3.0);
        assert!(!batch.is_normalized());
    }

    #[test]
    fn normalize_already_unit() {
        let batch = EmbeddingBatch::new(arr2(&[[0.0, 0.0, 1.0]])).unwrap();
        let out = l2_normalize(&batch).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn normalize_matches_per_row_norm_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = Array2::from_shape_fn((5, 8), |_| rng.random_range(-2.0..2.0));
        let batch = EmbeddingBatch::new(data.clone()).unwrap();
        let out = l2_normalize(&batch).unwrap();
        for i in 0..5 {
            // independent oracle: accumulate the squared norm by hand
            let mut sq = 0.0f64;
            for j in 0..8 {
                sq += data[[i, j]] * data[[i, j]];
            }
            let norm = sq.sqrt();
            for j in 0..8 {
                assert!((out.row(i)[j] - data[[i, j]] / norm).abs() < 1e-14);
            }
            let out_norm: f64 = out.row(i).dot(&out.row(i)).sqrt();
            assert!((out_norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let batch = EmbeddingBatch::new(arr2(&[[1.0, 0.0], [0.0, 0.0]])).unwrap();
        match l2_normalize(&batch) {
            Err(Error::ZeroNormRow { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected ZeroNormRow, got {other:?}"),
        }
    }

    #[test]
    fn batch_rejects_non_finite() {
        assert!(EmbeddingBatch::new(arr2(&[[1.0, f64::NAN]])).is_err());
    }

    #[test]
    fn cosine_self_and_antipodal() {
        let u = arr1(&[0.6, 0.8]);
        let anchors = arr2(&[[0.6, 0.8]]);
        let scores = cosine_scores(u.view(), anchors.view()).unwrap();
        assert!((scores[0] - 1.0).abs() < 1e-15);

        let neg = arr2(&[[-0.6, -0.8]]);
        let scores = cosine_scores(u.view(), neg.view()).unwrap();
        assert!((scores[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_orthogonal_and_diagonal() {
        let q = arr1(&[1.0, 0.0]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let anchors = arr2(&[[0.0, 1.0], [h, h]]);
        let scores = cosine_scores(q.view(), anchors.view()).unwrap();
        assert_eq!(scores[0], 0.0);
        assert!((scores[1] - h).abs() < 1e-15);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let q = arr1(&[1.0, 0.0, 0.0]);
        let anchors = arr2(&[[0.0, 1.0]]);
        assert!(matches!(
            cosine_scores(q.view(), anchors.view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn softmax_uniform_under_equal_scores() {
        for c in [-7.0, 0.0, 3.5] {
            let scores = arr1(&[c, c, c]);
            let p = softmax_temperature(scores.view(), 0.3).unwrap();
            for &v in p.probs().iter() {
                assert_eq!(v, 1.0 / 3.0);
            }
        }
    }

    #[test]
    fn softmax_sharp_tail_matches_high_precision_oracle() {
        // scores [1, 0] at tau = 0.04: p1 = e^-25 / (1 + e^-25), computed
        // with 60-digit arithmetic and frozen here.
        let p = softmax_temperature(arr1(&[1.0, 0.0]).view(), 0.04).unwrap();
        let expected_p1 = 1.388_794_386_477_114_6e-11;
        assert!(p.probs()[1] < 1e-10);
        assert!((p.probs()[1] - expected_p1).abs() / expected_p1 < 1e-12);
        assert!((p.probs()[0] - 0.999_999_999_986_112_1).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        let s = arr1(&[1.0, 0.0]);
        assert!(matches!(
            softmax_temperature(s.view(), 0.0),
            Err(Error::NonPositiveTemperature { .. })
        ));
        assert!(matches!(
            softmax_temperature(s.view(), -1.0),
            Err(Error::NonPositiveTemperature { .. })
        ));
    }

    #[test]
    fn softmax_survives_extreme_ratios() {
        // 1000/0.001 would overflow without max subtraction.
        let p = softmax_temperature(arr1(&[1000.0, 0.0]).view(), 0.001).unwrap();
        assert_eq!(p.probs()[0], 1.0);
        assert_eq!(p.probs()[1], 0.0);
    }

    #[test]
    fn kl_identity_is_zero() {
        let p = softmax_temperature(arr1(&[0.3, -0.2, 0.9]).view(), 0.5).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_onehot_vs_uniform_is_ln2() {
        let p = SimilarityDistribution::new(arr1(&[1.0, 0.0])).unwrap();
        let q = SimilarityDistribution::new(arr1(&[0.5, 0.5])).unwrap();
        let kl = kl_divergence(&p, &q).unwrap();
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_high_precision_oracle() {
        // Expected values computed with 60-digit arithmetic on these exact
        // decimal inputs and frozen here.
        let cases: &[(&[f64], &[f64], f64)] = &[
            (
                &[0.1, 0.2, 0.3, 0.4],
                &[0.25, 0.25, 0.25, 0.25],
                0.106_440_135_286_223_15,
            ),
            (
                &[0.05, 0.05, 0.1, 0.2, 0.6],
                &[0.3, 0.1, 0.2, 0.25, 0.15],
                0.593_587_855_863_697_9,
            ),
            (
                &[0.7, 0.0, 0.3],
                &[0.5, 0.25, 0.25],
                0.290_227_032_673_035_46,
            ),
        ];
        for (pv, qv, expected) in cases {
            let p = SimilarityDistribution::new(Array1::from(pv.to_vec())).unwrap();
            let q = SimilarityDistribution::new(Array1::from(qv.to_vec())).unwrap();
            let kl = kl_divergence(&p, &q).unwrap();
            assert!(
                (kl - expected).abs() < 1e-12,
                "kl={kl}, expected={expected}"
            );
        }
    }

    #[test]
    fn kl_length_mismatch() {
        let p = SimilarityDistribution::new(arr1(&[0.5, 0.5])).unwrap();
        let q = SimilarityDistribution::new(arr1(&[0.4, 0.3, 0.3])).unwrap();
        assert!(matches!(
            kl_divergence(&p, &q),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn kl_rows_mean_matches_scalar_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores_t = Array2::from_shape_fn((6, 12), |_| rng.random_range(-1.0..1.0));
        let scores_s = Array2::from_shape_fn((6, 12), |_| rng.random_range(-1.0..1.0));
        let (pt, lt) = softmax_rows(scores_t.view(), 0.2).unwrap();
        let (_, ls) = softmax_rows(scores_s.view(), 0.2).unwrap();
        let batched = kl_rows_mean(pt.view(), lt.view(), ls.view());

        let mut acc = 0.0;
        for i in 0..6 {
            let p = softmax_temperature(scores_t.row(i), 0.2).unwrap();
            let q = softmax_temperature(scores_s.row(i), 0.2).unwrap();
            acc += kl_divergence(&p, &q).unwrap();
        }
        assert!((batched - acc / 6.0).abs() < 1e-12);
    }

    #[test]
    fn distribution_validation() {
        assert!(SimilarityDistribution::new(arr1(&[0.5, 0.6])).is_err());
        assert!(SimilarityDistribution::new(arr1(&[-0.1, 1.1])).is_err());
        assert!(SimilarityDistribution::new(arr1(&[0.25; 4])).is_ok());
    }
}
