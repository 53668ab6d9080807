//! The student encoder: a small fully-connected network with manual
//! backpropagation, SGD with momentum and weight decay, a step learning-rate
//! schedule, and a binary checkpoint format.
//!
//! Parameters flatten layer by layer, weight matrix row-major then bias.
//! Training code round-trips through that flat layout so the optimizer can
//! stay agnostic of the layer structure.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as IoRead, Write as IoWrite};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            other => Err(Error::InvalidArchitecture(format!(
                "unknown activation tag {other}"
            ))),
        }
    }
}

/// Shape of one fully-connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }

    fn n_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

#[derive(Debug, Clone)]
struct Layer {
    weight: Array2<f64>,
    bias: Array1<f64>,
    activation: Activation,
}

/// Feedforward student encoder.
#[derive(Debug, Clone)]
pub struct StudentNetwork {
    layers: Vec<Layer>,
    param_version: u64,
}

/// Per-layer inputs and pre-activations retained by [`StudentNetwork::forward`]
/// for exact backpropagation. Tied to the parameter state it was computed
/// under; [`StudentNetwork::backward`] rejects a cache from older parameters.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    param_version: u64,
    inputs: Vec<Array2<f64>>,
    preacts: Vec<Array2<f64>>,
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidArchitecture("no layers".into()));
    }
    for spec in specs {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(Error::InvalidArchitecture(format!(
                "zero-sized layer {} -> {}",
                spec.in_dim, spec.out_dim
            )));
        }
    }
    for pair in specs.windows(2) {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::InvalidArchitecture(format!(
                "layer output {} feeds layer input {}",
                pair[0].out_dim, pair[1].in_dim
            )));
        }
    }
    if specs.last().unwrap().activation != Activation::Identity {
        return Err(Error::InvalidArchitecture(
            "final layer must have identity activation".into(),
        ));
    }
    Ok(())
}

impl StudentNetwork {
    /// Build a network with per-layer uniform init in
    /// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, drawing weights row-major then
    /// bias for each layer in order.
    pub fn new(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self> {
        validate_specs(specs)?;
        let layers = specs
            .iter()
            .map(|spec| {
                let bound = 1.0 / (spec.in_dim as f64).sqrt();
                let weight = Array2::from_shape_fn((spec.out_dim, spec.in_dim), |_| {
                    rng.random_range(-bound..bound)
                });
                let bias = Array1::from_shape_fn(spec.out_dim, |_| rng.random_range(-bound..bound));
                Layer {
                    weight,
                    bias,
                    activation: spec.activation,
                }
            })
            .collect();
        Ok(Self {
            layers,
            param_version: 0,
        })
    }

    /// Build a network from an explicit flat parameter vector.
    pub fn with_params(specs: &[LayerSpec], params: &[f64]) -> Result<Self> {
        validate_specs(specs)?;
        let expected: usize = specs.iter().map(LayerSpec::n_params).sum();
        if params.len() != expected {
            return Err(Error::LengthMismatch {
                left: expected,
                right: params.len(),
            });
        }
        let mut net = Self {
            layers: specs
                .iter()
                .map(|spec| Layer {
                    weight: Array2::zeros((spec.out_dim, spec.in_dim)),
                    bias: Array1::zeros(spec.out_dim),
                    activation: spec.activation,
                })
                .collect(),
            param_version: 0,
        };
        net.set_params_flat(params)?;
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec::new(l.weight.ncols(), l.weight.nrows(), l.activation))
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::LengthMismatch {
                left: self.n_params(),
                right: params.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for w in layer.weight.iter_mut() {
                *w = params[offset];
                offset += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = params[offset];
                offset += 1;
            }
        }
        self.param_version += 1;
        Ok(())
    }

    /// Drop all layers past the first `n`, keeping their trained parameters.
    /// The new final layer must end in identity activation.
    pub fn truncate(&mut self, n: usize) -> Result<()> {
        if n == 0 || n > self.layers.len() {
            return Err(Error::InvalidArchitecture(format!(
                "cannot truncate {}-layer network to {n}",
                self.layers.len()
            )));
        }
        self.layers.truncate(n);
        if self.layers.last().unwrap().activation != Activation::Identity {
            return Err(Error::InvalidArchitecture(
                "truncated network must end in identity activation".into(),
            ));
        }
        self.param_version += 1;
        Ok(())
    }

    /// Run the network on a batch (rows are samples). Returns unnormalized
    /// embeddings and the cache needed for [`Self::backward`].
    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<(EmbeddingBatch, ForwardCache)> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: batch.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut x = batch.to_owned();
        for layer in &self.layers {
            inputs.push(x.clone());
            let mut z = x.dot(&layer.weight.t());
            z += &layer.bias;
            preacts.push(z.clone());
            x = match layer.activation {
                Activation::Identity => z,
                Activation::Relu => z.mapv_into(|v| v.max(0.0)),
            };
        }
        let cache = ForwardCache {
            param_version: self.param_version,
            inputs,
            preacts,
        };
        Ok((EmbeddingBatch::new(x)?, cache))
    }

    /// Exact gradient of `sum_over_batch <grad_wrt_embeddings, output>` with
    /// respect to every parameter, flattened in parameter order.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_wrt_embeddings: ArrayView2<'_, f64>,
    ) -> Result<Vec<f64>> {
        if cache.param_version != self.param_version || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let last = cache.preacts.last().ok_or(Error::StaleCache)?;
        if grad_wrt_embeddings.dim() != last.dim() {
            return Err(Error::DimensionMismatch {
                expected: last.ncols(),
                actual: grad_wrt_embeddings.ncols(),
            });
        }

        let mut grads = vec![0.0; self.n_params()];
        let mut layer_ends = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for layer in &self.layers {
            offset += layer.weight.len() + layer.bias.len();
            layer_ends.push(offset);
        }

        let mut delta = grad_wrt_embeddings.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                delta.zip_mut_with(&cache.preacts[l], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let grad_w = delta.t().dot(&cache.inputs[l]);
            let grad_b = delta.sum_axis(Axis(0));
            let start = layer_ends[l] - layer.weight.len() - layer.bias.len();
            grads[start..start + layer.weight.len()]
                .copy_from_slice(grad_w.as_slice().expect("contiguous"));
            grads[start + layer.weight.len()..layer_ends[l]]
                .copy_from_slice(grad_b.as_slice().expect("contiguous"));
            if l > 0 {
                delta = delta.dot(&layer.weight);
            }
        }
        Ok(grads)
    }
}

/// SGD with momentum and weight decay:
/// `g' = g + wd * p; v = momentum * v + g'; p = p - lr * v`.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl SgdState {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, n_params: usize) -> Result<Self> {
        // zero is allowed so a frozen-network run can serve as a null case
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lr = {lr} must be nonnegative"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum = {momentum} outside [0, 1)"
            )));
        }
        if weight_decay < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "weight_decay = {weight_decay} must be nonnegative"
            )));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            velocity: vec![0.0; n_params],
        })
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(Error::LengthMismatch {
                left: self.velocity.len(),
                right: params.len().max(grads.len()),
            });
        }
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            let g = g + self.weight_decay * *p;
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
        Ok(())
    }
}

/// Step schedule: multiply the base rate by `factor` at each milestone epoch.
/// The drop takes effect at the milestone epoch itself.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, milestones: Vec<usize>, factor: f64) -> Result<Self> {
        if !base_lr.is_finite() || base_lr < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "base_lr = {base_lr} must be nonnegative"
            )));
        }
        if factor <= 0.0 || factor.is_nan() {
            return Err(Error::InvalidConfig(format!(
                "factor = {factor} must be positive"
            )));
        }
        if milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "milestones must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            base_lr,
            milestones,
            factor,
        })
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * self.factor.powi(drops as i32)
    }
}

const CKPT_MAGIC: [u8; 4] = *b"CKPT";
const CKPT_VERSION: u8 = 1;

/// Write the network to a binary checkpoint: magic "CKPT", version byte,
/// layer count, per-layer dims and activation tag, then parameters as
/// little-endian f32 in flat layer order.
pub fn save_checkpoint(net: &StudentNetwork, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CKPT_MAGIC)?;
    w.write_all(&[CKPT_VERSION])?;
    let specs = net.layer_specs();
    w.write_all(&(specs.len() as u32).to_le_bytes())?;
    for spec in &specs {
        w.write_all(&(spec.in_dim as u32).to_le_bytes())?;
        w.write_all(&(spec.out_dim as u32).to_le_bytes())?;
        w.write_all(&[spec.activation.code()])?;
    }
    for p in net.params_flat() {
        w.write_all(&(p as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`]. Parameters come back as
/// the exact f64 promotions of the stored f32 values.
pub fn load_checkpoint(path: &Path) -> Result<StudentNetwork> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if magic != CKPT_MAGIC {
        return Err(Error::BadMagic {
            expected: CKPT_MAGIC,
            found: magic,
        });
    }
    let mut version = [0u8; 1];
    read_exact_or_truncated(&mut r, &mut version)?;
    if version[0] != CKPT_VERSION {
        return Err(Error::InvalidArchitecture(format!(
            "unsupported checkpoint version {}",
            version[0]
        )));
    }
    let layer_count = read_u32(&mut r)? as usize;
    let mut specs = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let in_dim = read_u32(&mut r)? as usize;
        let out_dim = read_u32(&mut r)? as usize;
        let mut act = [0u8; 1];
        read_exact_or_truncated(&mut r, &mut act)?;
        specs.push(LayerSpec::new(
            in_dim,
            out_dim,
            Activation::from_code(act[0])?,
        ));
    }
    let expected: usize = specs.iter().map(LayerSpec::n_params).sum();
    let mut params = Vec::with_capacity(expected);
    let mut buf = [0u8; 4];
    for _ in 0..expected {
        read_exact_or_truncated(&mut r, &mut buf)?;
        params.push(f32::from_le_bytes(buf) as f64);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::SizeMismatch);
    }
    StudentNetwork::with_params(&specs, &params)
}

fn read_exact_or_truncated(r: &mut impl IoRead, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::TruncatedFile
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl IoRead) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact_or_truncated(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn relu_spec(i: usize, o: usize) -> LayerSpec {
        LayerSpec::new(i, o, Activation::Relu)
    }

    fn id_spec(i: usize, o: usize) -> LayerSpec {
        LayerSpec::new(i, o, Activation::Identity)
    }

    #[test]
    fn architecture_validation() {
        assert!(StudentNetwork::with_params(&[], &[]).is_err());
        // mismatched chain 4->8 then 7->2
        let specs = [relu_spec(4, 8), id_spec(7, 2)];
        assert!(matches!(
            StudentNetwork::with_params(&specs, &vec![0.0; 4 * 8 + 8 + 7 * 2 + 2]),
            Err(Error::InvalidArchitecture(_))
        ));
        // final layer must be identity
        let specs = [relu_spec(4, 2)];
        assert!(StudentNetwork::with_params(&specs, &[0.0; 10]).is_err());
    }

    #[test]
    fn zero_params_give_zero_embeddings() {
        let specs = [relu_spec(3, 5), id_spec(5, 2)];
        let n: usize = specs.iter().map(LayerSpec::n_params).sum();
        let net = StudentNetwork::with_params(&specs, &vec![0.0; n]).unwrap();
        let x = arr2(&[[1.0, -2.0, 0.5], [3.0, 0.0, -1.0]]);
        let (emb, _) = net.forward(x.view()).unwrap();
        assert!(emb.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        // weight = I, bias = 0
        let mut params = vec![0.0; 3 * 3 + 3];
        params[0] = 1.0;
        params[4] = 1.0;
        params[8] = 1.0;
        let net = StudentNetwork::with_params(&[id_spec(3, 3)], &params).unwrap();
        let x = arr2(&[[0.25, -1.5, 2.0]]);
        let (emb, _) = net.forward(x.view()).unwrap();
        assert_eq!(emb.data(), x.view());
    }

    #[test]
    fn forward_matches_straight_line_reevaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let specs = [relu_spec(4, 6), id_spec(6, 3)];
        let net = StudentNetwork::new(&specs, &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let (emb, _) = net.forward(x.view()).unwrap();

        // independent evaluation with explicit index loops
        let p = net.params_flat();
        let (w1, rest) = p.split_at(4 * 6);
        let (b1, rest) = rest.split_at(6);
        let (w2, b2) = rest.split_at(6 * 3);
        for r in 0..5 {
            let mut h = [0.0f64; 6];
            for o in 0..6 {
                let mut acc = b1[o];
                for i in 0..4 {
                    acc += w1[o * 4 + i] * x[[r, i]];
                }
                h[o] = acc.max(0.0);
            }
            for o in 0..3 {
                let mut acc = b2[o];
                for i in 0..6 {
                    acc += w2[o * 6 + i] * h[i];
                }
                assert!(
                    (emb.data()[[r, o]] - acc).abs() < 1e-12,
                    "row {r} out {o}: {} vs {acc}",
                    emb.data()[[r, o]]
                );
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = StudentNetwork::new(&[relu_spec(4, 8), id_spec(8, 4)], &mut rng).unwrap();
        let x = Array2::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0));
        let (a, _) = net.forward(x.view()).unwrap();
        let (b, _) = net.forward(x.view()).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = StudentNetwork::new(&[id_spec(4, 2)], &mut rng).unwrap();
        let x = Array2::zeros((2, 5));
        assert!(matches!(
            net.forward(x.view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn backward_zero_grad_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = StudentNetwork::new(&[relu_spec(3, 4), id_spec(4, 2)], &mut rng).unwrap();
        let x = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = net.forward(x.view()).unwrap();
        let g = net.backward(&cache, Array2::zeros((3, 2)).view()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_single_linear_layer_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = StudentNetwork::new(&[id_spec(3, 2)], &mut rng).unwrap();
        let x = arr2(&[[0.5, -1.0, 2.0]]);
        let (_, cache) = net.forward(x.view()).unwrap();
        let g_out = arr2(&[[0.7, -0.3]]);
        let g = net.backward(&cache, g_out.view()).unwrap();
        // dL/dW[o][i] = g_out[o] * x[i]; dL/db[o] = g_out[o]
        for o in 0..2 {
            for i in 0..3 {
                assert!((g[o * 3 + i] - g_out[[0, o]] * x[[0, i]]).abs() < 1e-15);
            }
        }
        assert!((g[6] - 0.7).abs() < 1e-15);
        assert!((g[7] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let specs = [relu_spec(8, 16), id_spec(16, 8)];
        let (net, x) = loop {
            let net = StudentNetwork::new(&specs, &mut rng).unwrap();
            let x = Array2::from_shape_fn((4, 8), |_| rng.random_range(-1.0..1.0));
            let (_, cache) = net.forward(x.view()).unwrap();
            // keep ReLU inputs away from the kink so central differences
            // see a locally linear function
            let min_abs = cache.preacts[0]
                .iter()
                .fold(f64::INFINITY, |m, &z| m.min(z.abs()));
            if min_abs > 1e-3 {
                break (net, x);
            }
        };
        let g_out = Array2::from_shape_fn((4, 8), |_| rng.random_range(-1.0..1.0));

        let (_, cache) = net.forward(x.view()).unwrap();
        let analytic = net.backward(&cache, g_out.view()).unwrap();

        let loss = |params: &[f64]| -> f64 {
            let net = StudentNetwork::with_params(&specs, params).unwrap();
            let (emb, _) = net.forward(x.view()).unwrap();
            (&emb.data() * &g_out.view()).sum()
        };
        let params = net.params_flat();
        let h = 1e-5;
        let mut worst = 0.0f64;
        let mut bad = 0usize;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus[i] += h;
            let mut minus = params.clone();
            minus[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-8);
            let rel = (analytic[i] - fd).abs() / denom;
            worst = worst.max(rel);
            if rel > 1e-5 {
                bad += 1;
            }
        }
        assert!(
            bad as f64 <= 0.01 * params.len() as f64,
            "{bad} of {} params exceed 1e-5 relative error",
            params.len()
        );
        assert!(worst <= 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = StudentNetwork::new(&[id_spec(3, 2)], &mut rng).unwrap();
        let x = arr2(&[[1.0, 2.0, 3.0]]);
        let (_, cache) = net.forward(x.view()).unwrap();
        let params = net.params_flat();
        net.set_params_flat(&params).unwrap();
        assert!(matches!(
            net.backward(&cache, Array2::zeros((1, 2)).view()),
            Err(Error::StaleCache)
        ));
    }

    #[test]
    fn params_roundtrip_through_flat_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let specs = [relu_spec(5, 7), id_spec(7, 3)];
        let net = StudentNetwork::new(&specs, &mut rng).unwrap();
        let flat = net.params_flat();
        assert_eq!(flat.len(), net.n_params());
        let rebuilt = StudentNetwork::with_params(&specs, &flat).unwrap();
        assert_eq!(rebuilt.params_flat(), flat);
        let x = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
        assert_eq!(
            net.forward(x.view()).unwrap().0.data(),
            rebuilt.forward(x.view()).unwrap().0.data()
        );
    }

    #[test]
    fn truncate_keeps_backbone_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let specs = [relu_spec(4, 6), id_spec(6, 3), id_spec(3, 2)];
        let mut net = StudentNetwork::new(&specs, &mut rng).unwrap();
        let full = net.params_flat();
        net.truncate(2).unwrap();
        assert_eq!(net.output_dim(), 3);
        let kept = net.params_flat();
        assert_eq!(&full[..kept.len()], kept.as_slice());
    }

    #[test]
    fn sgd_plain_step() {
        let mut sgd = SgdState::new(0.1, 0.0, 0.0, 3).unwrap();
        let mut p = [1.0, 2.0, 3.0];
        sgd.step(&mut p, &[0.5, -0.5, 1.0]).unwrap();
        assert_eq!(p, [0.95, 2.05, 2.9]);
    }

    #[test]
    fn sgd_velocity_decays_geometrically() {
        let mut sgd = SgdState::new(0.1, 0.9, 0.0, 1).unwrap();
        let mut p = [1.0];
        sgd.step(&mut p, &[1.0]).unwrap();
        let v0 = sgd.velocity()[0];
        assert_eq!(v0, 1.0);
        for k in 1..=5 {
            sgd.step(&mut p, &[0.0]).unwrap();
            let expected = 0.9f64.powi(k);
            assert!((sgd.velocity()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_two_step_scalar_recurrence() {
        // hand-rolled recurrence, same arithmetic order as the oracle below
        let (lr, mom, wd) = (0.1, 0.9, 1e-4);
        let mut p_ref = 1.0f64;
        let mut v_ref = 0.0f64;
        for g in [0.5, -0.25] {
            let g = g + wd * p_ref;
            v_ref = mom * v_ref + g;
            p_ref -= lr * v_ref;
        }

        let mut sgd = SgdState::new(lr, mom, wd, 1).unwrap();
        let mut p = [1.0];
        sgd.step(&mut p, &[0.5]).unwrap();
        sgd.step(&mut p, &[-0.25]).unwrap();
        assert!((p[0] - p_ref).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_lr_freezes_params_exactly() {
        let mut sgd = SgdState::new(0.0, 0.9, 1e-4, 2).unwrap();
        let mut p = [0.7, -0.2];
        sgd.step(&mut p, &[5.0, -3.0]).unwrap();
        sgd.step(&mut p, &[1.0, 2.0]).unwrap();
        assert_eq!(p, [0.7, -0.2]);
        assert!(SgdState::new(-0.1, 0.9, 1e-4, 2).is_err());
        assert!(SgdState::new(f64::NAN, 0.9, 1e-4, 2).is_err());
    }

    #[test]
    fn sgd_length_mismatch() {
        let mut sgd = SgdState::new(0.1, 0.0, 0.0, 2).unwrap();
        let mut p = [1.0];
        assert!(matches!(
            sgd.step(&mut p, &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn lr_schedule_paper_milestones() {
        let sched = LrSchedule::new(0.01, vec![90, 120], 0.2).unwrap();
        assert!((sched.lr_at_epoch(0) - 0.01).abs() < 1e-18);
        assert!((sched.lr_at_epoch(89) - 0.01).abs() < 1e-18);
        assert!((sched.lr_at_epoch(90) - 0.002).abs() < 1e-18);
        assert!((sched.lr_at_epoch(95) - 0.002).abs() < 1e-18);
        assert!((sched.lr_at_epoch(120) - 0.0004).abs() < 1e-18);
        assert!((sched.lr_at_epoch(125) - 0.0004).abs() < 1e-18);
    }

    #[test]
    fn lr_schedule_empty_milestones() {
        let sched = LrSchedule::new(0.05, vec![], 0.2).unwrap();
        for e in [0, 10, 1000] {
            assert_eq!(sched.lr_at_epoch(e), 0.05);
        }
    }

    #[test]
    fn lr_schedule_validation() {
        assert!(LrSchedule::new(-0.01, vec![], 0.2).is_err());
        assert!(LrSchedule::new(0.01, vec![5, 5], 0.2).is_err());
        assert!(LrSchedule::new(0.01, vec![9, 3], 0.2).is_err());
        assert!(LrSchedule::new(0.01, vec![], 0.0).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_value_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let specs = [relu_spec(6, 10), id_spec(10, 4)];
        let net = StudentNetwork::new(&specs, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&net, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.layer_specs(), net.layer_specs());
        // stored at f32: loaded params must equal the f32 rounding exactly
        for (orig, got) in net.params_flat().iter().zip(loaded.params_flat()) {
            assert_eq!(*orig as f32 as f64, got);
        }
        // a second save must be byte-identical
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let net = StudentNetwork::new(&[id_spec(3, 2)], &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let bad_magic = path.with_file_name("bad_magic.ckpt");
        let mut corrupted = bytes.clone();
        corrupted[0] = b'X';
        std::fs::write(&bad_magic, &corrupted).unwrap();
        assert!(matches!(
            load_checkpoint(&bad_magic),
            Err(Error::BadMagic { .. })
        ));

        let truncated = path.with_file_name("short.ckpt");
        std::fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_checkpoint(&truncated),
            Err(Error::TruncatedFile)
        ));

        let padded = path.with_file_name("long.ckpt");
        let mut extra = bytes.clone();
        extra.push(0);
        std::fs::write(&padded, &extra).unwrap();
        assert!(matches!(load_checkpoint(&padded), Err(Error::SizeMismatch)));
    }
}
