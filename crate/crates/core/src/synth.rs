//! Synthetic two-class benchmarks.
//!
//! Samples follow a tensor-normal model: `X = μ_c + σ · Z ×₁ A₁ ×₂ ⋯ ×_n A_n`
//! with `Z` i.i.d. standard normal and `A_k = Q_k diag(f_k)` for a random
//! orthogonal `Q_k`. Each mode has one quiet axis `q_k` (the first column of
//! `Q_k`, scaled by `mode_contrast < 1`) and unit scale elsewhere, so the
//! covariance is the Kronecker product of the mode covariances and the
//! quietest direction overall is the rank-one tensor `u = q₁ ⊗ ⋯ ⊗ q_n`.
//!
//! The class means sit at `±separation/2 · u`. Along `u` the classes are far
//! apart while neighbours barely differ, which is the structure a locality
//! preserving method looks for; `u` also carries the most variance overall,
//! which is what PCA looks for. `u` has all tensor-train ranks equal to one.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::evalbench::LabeledDataset;
use crate::stiefel::orthonormal_factor;
use crate::tensor::DenseTensor;
use crate::ttmap::contract_cores;
use crate::ttmap::TtCore;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoClusterSpec {
    pub shape: Vec<usize>,
    pub samples: usize,
    /// Distance between the class means, in units of `noise_std`.
    pub separation: f64,
    pub noise_std: f64,
    /// Scale of each mode's quiet axis relative to the others.
    pub mode_contrast: f64,
    pub seed: u64,
}

impl Default for TwoClusterSpec {
    fn default() -> Self {
        Self {
            shape: vec![4, 4, 4],
            samples: 200,
            separation: 8.0,
            noise_std: 1.0,
            mode_contrast: 0.3,
            seed: 0,
        }
    }
}

/// Random orthogonal mode bases `Q_k` for a shape and seed.
fn mode_bases(shape: &[usize], seed: u64) -> Result<Vec<DMatrix<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d1ec);
    shape
        .iter()
        .map(|&m| orthonormal_factor(&DMatrix::from_fn(m, m, |_, _| rng.sample(StandardNormal))))
        .collect()
}

/// The class direction `u` for a shape and seed (unit norm).
pub fn class_direction(shape: &[usize], seed: u64) -> Result<DenseTensor> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::invalid(format!("bad shape {shape:?}")));
    }
    let bases = mode_bases(shape, seed)?;
    DenseTensor::from_fn(shape, |idx| idx.iter().zip(&bases).map(|(&i, q)| q[(i, 0)]).product())
}

/// Two balanced classes (labels alternate `0, 1, 0, …`).
pub fn two_clusters(spec: &TwoClusterSpec) -> Result<LabeledDataset> {
    if spec.samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    if !(spec.mode_contrast > 0.0) || !(spec.noise_std >= 0.0) {
        return Err(Error::invalid("mode_contrast must be positive and noise_std nonnegative"));
    }
    let u = class_direction(&spec.shape, spec.seed)?;
    // each A_k as a core with unit outer ranks, so the mode products are one sweep
    let cores: Vec<TtCore> = mode_bases(&spec.shape, spec.seed)?
        .into_iter()
        .map(|q| {
            let m = q.nrows();
            let mut a = q;
            a.column_mut(0).scale_mut(spec.mode_contrast);
            // contract_cores multiplies by the transpose of the left unfolding
            TtCore::from_left_unfolding(&a.transpose(), 1, m)
        })
        .collect::<Result<_>>()?;
    let d = u.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(spec.samples);
    let mut labels = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let class = i % 2;
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        // after sweeping every mode the buffer is back in sample layout
        let noise = rotate_modes(&z, &cores);
        let sign = if class == 0 { -0.5 } else { 0.5 };
        let x = noise
            .iter()
            .zip(u.data())
            .map(|(n, ui)| spec.noise_std * (n + sign * spec.separation * ui))
            .collect();
        samples.push(DenseTensor::new(spec.shape.clone(), x)?);
        labels.push(class);
    }
    LabeledDataset::new(samples, labels, 2, format!("two-clusters:{:?}:seed{}", spec.shape, spec.seed))
}

/// Applies `A_k` along every mode of a first-mode-fastest buffer.
fn rotate_modes(z: &[f64], cores: &[TtCore]) -> Vec<f64> {
    // Sweeping mode k moves it to the back, so after n sweeps the modes are
    // in their original order again.
    let mut buf = z.to_vec();
    for core in cores {
        let swept = contract_cores(&buf, std::slice::from_ref(core));
        // swept: I_k × (rest); transpose so mode k is last
        buf = swept.transpose().as_slice().to_vec();
    }
    buf
}

/// Grey images in `[0, 255]`: the two-cluster layout (which must be 2-mode)
/// scaled by `scale` grey levels around mid-grey, then clipped.
pub fn two_class_images(spec: &TwoClusterSpec, scale: f64) -> Result<LabeledDataset> {
    if spec.shape.len() != 2 {
        return Err(Error::invalid(format!("images need a 2-mode shape, got {:?}", spec.shape)));
    }
    let base = two_clusters(spec)?;
    let images = base
        .samples()
        .iter()
        .map(|s| {
            let data = s.data().iter().map(|v| (127.5 + scale * v).clamp(0.0, 255.0)).collect();
            DenseTensor::new(s.shape().to_vec(), data)
        })
        .collect::<Result<_>>()?;
    LabeledDataset::new(
        images,
        base.labels().to_vec(),
        2,
        format!("two-class-images:{:?}:seed{}", spec.shape, spec.seed),
    )
}
