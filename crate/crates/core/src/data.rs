//! Synthetic clustered dataset generation, student-input augmentation, and
//! the binary file formats for embedding matrices and label vectors.
//!
//! The generator builds class prototypes in a latent space, derives raw
//! inputs through a fixed random map with a tanh nonlinearity, and derives
//! teacher embeddings linearly from the latent (plus noise, then
//! normalization). The teacher therefore sees cleaner structure than the raw
//! inputs, which is what makes imitating it worthwhile.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as IoRead, Write as IoWrite};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embedding::{l2_normalize, EmbeddingBatch};
use crate::error::{Error, Result};

/// Gain applied to the latent-to-raw map before tanh. Values near 2 push a
/// sizable fraction of entries into the saturated region, which keeps the
/// raw geometry genuinely nonlinear in the latent.
const RAW_MAP_GAIN: f64 = 2.0;

/// Parameters of the synthetic task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub train_count: usize,
    pub val_count: usize,
    pub latent_dim: usize,
    pub raw_dim: usize,
    pub teacher_dim: usize,
    pub class_spread: f64,
    pub sample_noise: f64,
    pub teacher_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            train_count: 5000,
            val_count: 1000,
            latent_dim: 16,
            raw_dim: 32,
            teacher_dim: 32,
            class_spread: 1.0,
            sample_noise: 0.15,
            teacher_noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidSpec("num_classes must be positive".into()));
        }
        if self.train_count < self.num_classes || self.val_count < self.num_classes {
            return Err(Error::InvalidSpec(format!(
                "counts (train {}, val {}) must be at least num_classes {}",
                self.train_count, self.val_count, self.num_classes
            )));
        }
        if self.latent_dim == 0 || self.raw_dim == 0 || self.teacher_dim == 0 {
            return Err(Error::InvalidSpec("dimensions must be positive".into()));
        }
        for (name, v) in [
            ("class_spread", self.class_spread),
            ("sample_noise", self.sample_noise),
            ("teacher_noise", self.teacher_noise),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "{name} = {v} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// One split of the synthetic task: raw inputs, labels, and the cached
/// teacher embeddings, aligned by row.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub raw: Array2<f64>,
    pub labels: Vec<u32>,
    pub teacher_cache: EmbeddingBatch,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sigma: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = rng.sample(StandardNormal);
        sigma * z
    })
}

fn generate_split(
    spec: &SyntheticSpec,
    prototypes: &Array2<f64>,
    raw_map: &Array2<f64>,
    teacher_map: &Array2<f64>,
    count: usize,
    latent_stream: u64,
    teacher_noise_stream: u64,
) -> Result<Dataset> {
    let mut latent_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    latent_rng.set_stream(latent_stream);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(teacher_noise_stream);

    let labels: Vec<u32> = (0..count).map(|i| (i % spec.num_classes) as u32).collect();
    let mut latents = normal_matrix(&mut latent_rng, count, spec.latent_dim, spec.sample_noise);
    for (i, mut row) in latents.rows_mut().into_iter().enumerate() {
        row += &prototypes.row(labels[i] as usize);
    }

    let raw = latents.dot(&raw_map.t()).mapv_into(f64::tanh);

    let mut teacher_lin = latents.dot(&teacher_map.t());
    teacher_lin += &normal_matrix(&mut noise_rng, count, spec.teacher_dim, spec.teacher_noise);
    let teacher_cache = l2_normalize(&EmbeddingBatch::new(teacher_lin)?)?;

    Ok(Dataset {
        raw,
        labels,
        teacher_cache,
    })
}

/// Generate the train and val splits deterministically from the spec.
///
/// Independent seeded substreams drive prototypes, the two fixed maps, and
/// the per-split sampling, so each piece is stable under changes elsewhere.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;

    let mut proto_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    proto_rng.set_stream(0);
    let prototypes = normal_matrix(
        &mut proto_rng,
        spec.num_classes,
        spec.latent_dim,
        spec.class_spread,
    );

    let mut a_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    a_rng.set_stream(1);
    let raw_map = normal_matrix(
        &mut a_rng,
        spec.raw_dim,
        spec.latent_dim,
        RAW_MAP_GAIN / (spec.latent_dim as f64).sqrt(),
    );

    let mut b_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    b_rng.set_stream(2);
    let teacher_map = normal_matrix(
        &mut b_rng,
        spec.teacher_dim,
        spec.latent_dim,
        1.0 / (spec.latent_dim as f64).sqrt(),
    );

    let train = generate_split(
        spec,
        &prototypes,
        &raw_map,
        &teacher_map,
        spec.train_count,
        3,
        4,
    )?;
    let val = generate_split(
        spec,
        &prototypes,
        &raw_map,
        &teacher_map,
        spec.val_count,
        5,
        6,
    )?;
    Ok((train, val))
}

/// Additive i.i.d. Gaussian noise per entry; `sigma_aug = 0` returns the
/// input exactly (the rng still advances, keeping downstream draws aligned
/// across sigma settings).
pub fn augment(raw_batch: ArrayView2<'_, f64>, sigma_aug: f64, rng: &mut impl Rng) -> Array2<f64> {
    let mut out = raw_batch.to_owned();
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma_aug * z;
    }
    out
}

const EMB_MAGIC: [u8; 4] = *b"EMB1";
const LBL_MAGIC: [u8; 4] = *b"LBL1";

/// Write a float matrix: magic "EMB1", u32 count, u32 dim, u8 normalized
/// flag, then count*dim little-endian f32 values row-major.
pub fn write_embeddings(path: &Path, batch: &EmbeddingBatch) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&EMB_MAGIC)?;
    w.write_all(&(batch.rows() as u32).to_le_bytes())?;
    w.write_all(&(batch.dim() as u32).to_le_bytes())?;
    w.write_all(&[batch.is_normalized() as u8])?;
    for &v in batch.data().iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a matrix written by [`write_embeddings`]. Values come back as exact
/// f64 promotions of the stored f32s.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingBatch> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if magic != EMB_MAGIC {
        return Err(Error::BadMagic {
            expected: EMB_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    let mut flag = [0u8; 1];
    read_exact_or_truncated(&mut r, &mut flag)?;
    let mut data = Vec::with_capacity(count * dim);
    let mut buf = [0u8; 4];
    for _ in 0..count * dim {
        read_exact_or_truncated(&mut r, &mut buf)?;
        data.push(f32::from_le_bytes(buf) as f64);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::SizeMismatch);
    }
    let matrix = Array2::from_shape_vec((count, dim), data).map_err(|_| Error::SizeMismatch)?;
    if flag[0] != 0 {
        EmbeddingBatch::new_normalized(matrix)
    } else {
        EmbeddingBatch::new(matrix)
    }
}

/// Write labels: magic "LBL1", u32 count, then count little-endian u32s.
pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&LBL_MAGIC)?;
    w.write_all(&(labels.len() as u32).to_le_bytes())?;
    for &l in labels {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if magic != LBL_MAGIC {
        return Err(Error::BadMagic {
            expected: LBL_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(&mut r)? as usize;
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        labels.push(read_u32(&mut r)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::SizeMismatch);
    }
    Ok(labels)
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
