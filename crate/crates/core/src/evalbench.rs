//! Baselines, 1NN evaluation, metrics, block noise and train/test splits.
//!
//! Feature matrices are `D × N` with one sample per column. Class labels are
//! zero-based here (`0..C`); file formats use `1..C` and convert on load.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::AffinityGraph;
use crate::stiefel::{self, min_trace_on_stiefel};
use crate::tensor::DenseTensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<DenseTensor>,
    labels: Vec<usize>,
    num_classes: usize,
    /// Where the data came from (file path, generator name, …).
    pub source: String,
}

impl LabeledDataset {
    pub fn new(samples: Vec<DenseTensor>, labels: Vec<usize>, num_classes: usize, source: impl Into<String>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::shape(format!("{} samples but {} labels", samples.len(), labels.len())));
        }
        if let Some(first) = samples.first() {
            if let Some(i) = samples.iter().position(|s| s.shape() != first.shape()) {
                return Err(Error::shape(format!(
                    "sample {i} has shape {:?}, expected {:?}",
                    samples[i].shape(),
                    first.shape()
                )));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::format(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self {
            samples,
            labels,
            num_classes,
            source: source.into(),
        })
    }

    pub fn samples(&self) -> &[DenseTensor] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Shape of one sample; empty for an empty dataset.
    pub fn sample_shape(&self) -> &[usize] {
        self.samples.first().map_or(&[], |s| s.shape())
    }

    pub fn input_dim(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Index(format!("sample {bad} of {}", self.len())));
        }
        Ok(Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            source: self.source.clone(),
        })
    }

    /// Every sample reshaped to `shape` (same number of entries).
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let samples = self.samples.iter().map(|s| s.reshape(shape)).collect::<Result<_>>()?;
        Ok(Self { samples, ..self.clone() })
    }

    /// Vectorised samples as columns of a `D × N` matrix.
    pub fn feature_matrix(&self) -> DMatrix<f64> {
        feature_matrix(&self.samples)
    }

    /// Smallest and largest entry over all samples.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        let mut it = self.samples.iter().flat_map(|s| s.data().iter().copied());
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

pub fn feature_matrix(samples: &[DenseTensor]) -> DMatrix<f64> {
    let d = samples.first().map_or(0, DenseTensor::len);
    let mut data = Vec::with_capacity(d * samples.len());
    for s in samples {
        data.extend_from_slice(s.data());
    }
    DMatrix::from_vec(d, samples.len(), data)
}

/// Counts with rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if let Some(row) = counts.iter().find(|r| r.len() != c) {
            return Err(Error::shape(format!("confusion matrix row of length {} in a {c}-class matrix", row.len())));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shape(format!("{} truths vs {} predictions", truth.len(), predicted.len())));
        }
        let mut counts = vec![vec![0u64; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::invalid(format!("label pair ({t}, {p}) out of range for {num_classes} classes")));
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    /// Predicted as `c` but truly another class.
    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.num_classes()).filter(|&t| t != c).map(|t| self.counts[t][c]).sum()
    }

    /// Truly `c` but predicted as another class.
    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.num_classes()).filter(|&p| p != c).map(|p| self.counts[c][p]).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.counts {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        out
    }
}

/// Normalisation of the chance-agreement term in the kappa coefficient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaNormalization {
    /// `Σ_c (TP_c+FP_c)(TP_c+FN_c) / C²`. Not bounded by 1.
    #[default]
    ClassSquared,
    /// `Σ_c (TP_c+FP_c)(TP_c+FN_c) / T²` — Cohen's kappa.
    Cohen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub oa: f64,
    pub aa: f64,
    pub kc: f64,
}

impl Metrics {
    /// OA, AA and KC of a confusion matrix.
    ///
    /// AA averages per-class precision `TP_c / (TP_c + FP_c)`; a class that is
    /// never predicted contributes 0. When the kappa denominator vanishes, KC is
    /// 1 for a perfect matrix and 0 otherwise.
    pub fn compute(cm: &ConfusionMatrix, kappa: KappaNormalization) -> Result<Self> {
        let t = cm.total();
        let c = cm.num_classes();
        if c == 0 || t == 0 {
            return Err(Error::invalid("metrics of an empty confusion matrix"));
        }
        let tp: u64 = (0..c).map(|k| cm.true_positives(k)).sum();
        let oa = tp as f64 / t as f64;
        let aa = (0..c)
            .map(|k| {
                let predicted = cm.true_positives(k) + cm.false_positives(k);
                if predicted == 0 {
                    0.0
                } else {
                    cm.true_positives(k) as f64 / predicted as f64
                }
            })
            .sum::<f64>()
            / c as f64;
        let marginal: f64 = (0..c)
            .map(|k| {
                let p = (cm.true_positives(k) + cm.false_positives(k)) as f64;
                let a = (cm.true_positives(k) + cm.false_negatives(k)) as f64;
                p * a
            })
            .sum();
        let chance = match kappa {
            KappaNormalization::ClassSquared => marginal / (c * c) as f64,
            KappaNormalization::Cohen => marginal / (t as f64 * t as f64),
        };
        let kc = if chance == 1.0 {
            if tp == t {
                1.0
            } else {
                0.0
            }
        } else {
            (oa - chance) / (1.0 - chance)
        };
        Ok(Self { oa, aa, kc })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimResult {
    pub target_dim: usize,
    pub metrics: Metrics,
    /// KC under the other normalisation, for comparison.
    pub kc_alternate: f64,
    pub param_count: usize,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub seed: u64,
    pub train_fraction: f64,
    pub noise_fraction: f64,
    pub kappa: KappaNormalization,
    pub train_size: usize,
    pub test_size: usize,
    pub input_dim: usize,
    pub results: Vec<DimResult>,
    /// The fully resolved settings that produced this report.
    #[serde(default)]
    pub spec: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }
}

/// Scores predictions against the truth under both kappa normalisations.
pub fn score(
    truth: &[usize],
    predicted: &[usize],
    num_classes: usize,
    kappa: KappaNormalization,
    target_dim: usize,
    param_count: usize,
) -> Result<DimResult> {
    let confusion = ConfusionMatrix::from_predictions(truth, predicted, num_classes)?;
    let metrics = Metrics::compute(&confusion, kappa)?;
    let other = match kappa {
        KappaNormalization::ClassSquared => KappaNormalization::Cohen,
        KappaNormalization::Cohen => KappaNormalization::ClassSquared,
    };
    Ok(DimResult {
        target_dim,
        metrics,
        kc_alternate: Metrics::compute(&confusion, other)?.kc,
        param_count,
        confusion,
    })
}

/// `x ↦ Pᵀ (x − μ)`, with `μ` absent for uncentred projections.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProjection {
    pub basis: DMatrix<f64>,
    pub mean: Option<DVector<f64>>,
    /// Eigenvalues attached to each basis column (variances for PCA,
    /// generalised eigenvalues for LPP).
    pub eigenvalues: Vec<f64>,
}

impl LinearProjection {
    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.basis.len()
    }

    /// Projects the columns of a `D × N` matrix.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.input_dim() {
            return Err(Error::shape(format!(
                "features have {} rows, projection expects {}",
                x.nrows(),
                self.input_dim()
            )));
        }
        Ok(match &self.mean {
            Some(mu) => {
                let mut centred = x.clone();
                for mut col in centred.column_iter_mut() {
                    col -= mu;
                }
                self.basis.tr_mul(&centred)
            }
            None => self.basis.tr_mul(x),
        })
    }
}

fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    x.column_mean()
}

/// Principal components of the columns of `x`.
pub fn pca_fit(x: &DMatrix<f64>, p: usize) -> Result<LinearProjection> {
    let (d, n) = x.shape();
    if p == 0 || p > d.min(n) {
        return Err(Error::invalid(format!("PCA dimension {p} must be in 1..={}", d.min(n))));
    }
    let mean = column_mean(x);
    let mut centred = x.clone();
    for mut col in centred.column_iter_mut() {
        col -= &mean;
    }
    let cov = &centred * centred.transpose() / n as f64;
    let sol = min_trace_on_stiefel(&(-cov), p)?;
    Ok(LinearProjection {
        basis: sol.basis,
        mean: Some(mean),
        eigenvalues: sol.eigenvalues.iter().map(|v| -v).collect(),
    })
}

/// Number of PCA components kept before LPP when the sample count is too small.
pub fn lpp_preprojection_dim(samples: usize, classes: usize, dim: usize) -> usize {
    samples.saturating_sub(classes).min(dim)
}

/// Locality preserving projections: the `p` smallest generalised eigenvectors
/// of `(X L Xᵀ, X D Xᵀ)`, scaled so `Aᵀ X D Xᵀ A = I`.
///
/// `preproject = Some(m)` first maps the data onto its top `m` principal
/// components; the returned basis is the composition. Without it, `X D Xᵀ` must
/// be nonsingular, which fails whenever `D > N`.
pub fn lpp_fit(x: &DMatrix<f64>, graph: &AffinityGraph, p: usize, preproject: Option<usize>) -> Result<LinearProjection> {
    let (d, n) = x.shape();
    if graph.len() != n {
        return Err(Error::shape(format!("graph has {} nodes for {n} samples", graph.len())));
    }
    let (features, pre) = match preproject {
        Some(m) => {
            let pca = pca_fit(x, m)?;
            (pca.transform(x)?, Some(pca))
        }
        None => (x.clone(), None),
    };
    let dim = features.nrows();
    if p == 0 || p > dim {
        return Err(Error::invalid(format!("LPP dimension {p} must be in 1..={dim}")));
    }
    if pre.is_none() && d > n {
        return Err(Error::Singular(format!(
            "X D Xᵀ is singular: dimension {d} exceeds the {n} samples; enable PCA pre-projection"
        )));
    }
    let a = &features * graph.laplacian() * features.transpose();
    let b = &features * graph.degree_matrix() * features.transpose();
    let b = stiefel::sym(&b);
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("X D Xᵀ is not positive definite".into()))?;
    let l = chol.l();
    let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    if !(min_pivot > 1e-12 * scale) {
        return Err(Error::Singular(format!(
            "X D Xᵀ is numerically singular (pivot {min_pivot:.3e} vs scale {scale:.3e})"
        )));
    }
    // C = L⁻¹ A L⁻ᵀ has the same eigenvalues as the pencil; a = L⁻ᵀ w.
    let linv_a = l
        .solve_lower_triangular(&a)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let sol = min_trace_on_stiefel(&stiefel::sym(&c), p)?;
    let vectors = l
        .transpose()
        .solve_upper_triangular(&sol.basis)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    Ok(match pre {
        Some(pca) => LinearProjection {
            basis: &pca.basis * vectors,
            mean: pca.mean,
            eigenvalues: sol.eigenvalues,
        },
        None => LinearProjection {
            basis: vectors,
            mean: None,
            eigenvalues: sol.eigenvalues,
        },
    })
}

/// Labels each test column by its nearest training column (Euclidean);
/// equidistant training points resolve to the lower index.
pub fn knn1_classify(train: &DMatrix<f64>, train_labels: &[usize], test: &DMatrix<f64>) -> Result<Vec<usize>> {
    if train.ncols() == 0 {
        return Err(Error::invalid("empty training set"));
    }
    if train.ncols() != train_labels.len() {
        return Err(Error::shape(format!("{} training columns, {} labels", train.ncols(), train_labels.len())));
    }
    if train.nrows() != test.nrows() {
        return Err(Error::shape(format!(
            "training features have {} rows, test features {}",
            train.nrows(),
            test.nrows()
        )));
    }
    Ok((0..test.ncols())
        .into_par_iter()
        .map(|j| {
            let q = test.column(j);
            let mut best = (f64::INFINITY, 0);
            for i in 0..train.ncols() {
                let d = (train.column(i) - q).norm_squared();
                if d < best.0 {
                    best = (d, i);
                }
            }
            train_labels[best.1]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePlacement {
    /// Top-left corner of the centre quadrant, `(H/4, W/4)`.
    #[default]
    Fixed,
    Random,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseValue {
    /// Seeded coin flip per image between the two extremes.
    #[default]
    Either,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSettings {
    pub fraction: f64,
    pub block: usize,
    /// Extremes written into the block; `None` uses the dataset's global min/max.
    pub min_val: Option<f64>,
    pub max_val: Option<f64>,
    pub placement: NoisePlacement,
    pub value: NoiseValue,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self {
            fraction: 0.0,
            block: 4,
            min_val: None,
            max_val: None,
            placement: NoisePlacement::Fixed,
            value: NoiseValue::Either,
        }
    }
}

/// Number of images corrupted for a given fraction: `⌈fraction·N⌉`.
pub fn noisy_count(fraction: f64, n: usize) -> usize {
    // guard against products like 0.1·100 landing a hair above an integer
    let exact = fraction * n as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() <= 1e-9 * exact.max(1.0) {
        rounded as usize
    } else {
        exact.ceil() as usize
    }
}

/// Overwrites one square block in `⌈fraction·N⌉` seeded-random images.
///
/// Returns the new dataset and the sorted indices of the corrupted images.
pub fn inject_block_noise(data: &LabeledDataset, settings: &NoiseSettings, seed: u64) -> Result<(LabeledDataset, Vec<usize>)> {
    if !(0.0..=1.0).contains(&settings.fraction) {
        return Err(Error::invalid(format!("noise fraction {} outside [0, 1]", settings.fraction)));
    }
    let shape = data.sample_shape().to_vec();
    if data.is_empty() {
        return Ok((data.clone(), Vec::new()));
    }
    if shape.len() != 2 {
        return Err(Error::shape(format!("block noise needs 2-mode images, got shape {shape:?}")));
    }
    let (h, w, b) = (shape[0], shape[1], settings.block);
    if b == 0 || h < b || w < b {
        return Err(Error::shape(format!("{h}×{w} image is smaller than a {b}×{b} block")));
    }
    let (lo, hi) = data.value_range().expect("nonempty");
    let min_val = settings.min_val.unwrap_or(lo);
    let max_val = settings.max_val.unwrap_or(hi);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = order[..noisy_count(settings.fraction, data.len())].to_vec();
    chosen.sort_unstable();

    let mut out = data.clone();
    for &i in &chosen {
        let (r0, c0) = match settings.placement {
            NoisePlacement::Fixed => ((h / 4).min(h - b), (w / 4).min(w - b)),
            NoisePlacement::Random => (rng.random_range(0..=h - b), rng.random_range(0..=w - b)),
        };
        let value = match settings.value {
            NoiseValue::Min => min_val,
            NoiseValue::Max => max_val,
            NoiseValue::Either => {
                if rng.random_bool(0.5) {
                    max_val
                } else {
                    min_val
                }
            }
        };
        let img = out.samples[i].data_mut();
        for c in c0..c0 + b {
            for r in r0..r0 + b {
                img[r + h * c] = value;
            }
        }
    }
    Ok((out, chosen))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded train/test split with `⌊fraction·N⌋` training samples.
///
/// With `stratified`, each class contributes in proportion to its size
/// (largest remainder), and every class with at least two samples gets one
/// training sample when the training set is large enough. Both index lists
/// come back sorted.
pub fn split(labels: &[usize], num_classes: usize, train_fraction: f64, seed: u64, stratified: bool) -> Result<Split> {
    let n = labels.len();
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let n_train = (train_fraction * n as f64 + 1e-9).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::invalid(format!(
            "fraction {train_fraction} of {n} samples leaves an empty side"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::invalid(format!("label {l} out of range for {num_classes} classes")));
            }
            by_class[l].push(i);
        }
        let quotas = stratified_quotas(&by_class.iter().map(Vec::len).collect::<Vec<_>>(), n_train);
        let mut train = Vec::with_capacity(n_train);
        for (members, quota) in by_class.iter_mut().zip(quotas) {
            members.shuffle(&mut rng);
            train.extend_from_slice(&members[..quota]);
        }
        train
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order.truncate(n_train);
        order
    };
    train.sort_unstable();
    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let test = (0..n).filter(|&i| !in_train[i]).collect();
    Ok(Split { train, test })
}

fn stratified_quotas(sizes: &[usize], n_train: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let exact: Vec<f64> = sizes.iter().map(|&s| n_train as f64 * s as f64 / n as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = n_train - quotas.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if quotas[c] < sizes[c] {
            quotas[c] += 1;
            left -= 1;
        }
    }
    // make sure every class with a spare sample shows up in training
    for c in 0..sizes.len() {
        if quotas[c] == 0 && sizes[c] >= 2 {
            let donor = (0..sizes.len()).filter(|&d| quotas[d] > 1).max_by_key(|&d| (quotas[d], usize::MAX - d));
            if let Some(d) = donor {
                quotas[d] -= 1;
                quotas[c] += 1;
            }
        }
    }
    // and keeps at least one test sample where possible
    for c in 0..sizes.len() {
        if sizes[c] >= 2 && quotas[c] == sizes[c] {
            let taker = (0..sizes.len()).find(|&d| d != c && quotas[d] + 1 < sizes[d]);
            if let Some(d) = taker {
                quotas[c] -= 1;
                quotas[d] += 1;
            }
        }
    }
    quotas
}
