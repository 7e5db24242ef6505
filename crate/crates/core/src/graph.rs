//! kNN heat-kernel affinity graphs and their Frobenius-norm reweighting.
//!
//! `s_ij = exp(−‖x_i − x_j‖²_F / t)` when either point is among the other's
//! `k` nearest neighbours (exact search, ties to the smaller index), else 0.
//! The diagonal is always zero. Neighbourhoods are computed once, on the raw
//! samples.
//!
//! Reweighting divides each edge by the current projected distance,
//! `s̃_ij = s_ij / max(‖t_i − t_j‖₂, ε)`, which turns the unsquared objective
//! `½Σ‖t_i − t_j‖ s_ij` into the squared surrogate `½Σ‖t_i − t_j‖² s̃_ij`
//! at the current map.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::tensor::DenseTensor;
use crate::ttmap::TtMap;
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    weights: DMatrix<f64>,
    degrees: DVector<f64>,
    laplacian: DMatrix<f64>,
    k: usize,
    t: f64,
}

impl AffinityGraph {
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn degrees(&self) -> &DVector<f64> {
        &self.degrees
    }

    pub fn degree_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.degrees)
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.nrows() == 0
    }

    /// Nonzero edges `(i, j, s_ij)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        upper_edges(&self.weights)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReweightedGraph {
    weights: DMatrix<f64>,
    degrees: DVector<f64>,
    laplacian: DMatrix<f64>,
    epsilon: f64,
    guarded_pairs: usize,
}

impl ReweightedGraph {
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn degrees(&self) -> &DVector<f64> {
        &self.degrees
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Number of edges (`i < j`) whose projected distance fell below `ε`.
    pub fn guarded_pairs(&self) -> usize {
        self.guarded_pairs
    }

    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        upper_edges(&self.weights)
    }
}

fn upper_edges(w: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let n = w.nrows();
    let mut out = Vec::new();
    for j in 0..n {
        for i in 0..j {
            let v = w[(i, j)];
            if v != 0.0 {
                out.push((i, j, v));
            }
        }
    }
    out
}

/// `L = D − S` with `D` the diagonal of row sums.
pub fn laplacian(weights: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let degrees = DVector::from_iterator(weights.nrows(), weights.row_iter().map(|r| r.sum()));
    let l = DMatrix::from_diagonal(&degrees) - weights;
    (degrees, l)
}

/// Squared Euclidean distances between flat samples, computed row-parallel.
pub fn pairwise_sq_distances(samples: &[&[f64]]) -> DMatrix<f64> {
    let n = samples.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    samples[i]
                        .iter()
                        .zip(samples[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum()
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Indices of the `k` nearest other samples of each sample, ties to the smaller index.
pub fn knn_indices(dist: &DMatrix<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = dist.nrows();
    (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| dist[(i, a)].total_cmp(&dist[(i, b)]).then(a.cmp(&b)));
            others.truncate(k);
            others
        })
        .collect()
}

pub fn build_affinity(samples: &[DenseTensor], k: usize, t: f64) -> Result<AffinityGraph> {
    if let Some(first) = samples.first() {
        if let Some(bad) = samples.iter().position(|s| s.shape() != first.shape()) {
            return Err(Error::shape(format!(
                "sample {bad} has shape {:?}, expected {:?}",
                samples[bad].shape(),
                first.shape()
            )));
        }
    }
    let flat: Vec<&[f64]> = samples.iter().map(DenseTensor::data).collect();
    build_affinity_flat(&flat, k, t)
}

/// [`build_affinity`] over flat vectors.
pub fn build_affinity_flat(samples: &[&[f64]], k: usize, t: f64) -> Result<AffinityGraph> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {n}")));
    }
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("neighbour count must satisfy 1 ≤ k < N, got k={k}, N={n}")));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("kernel width must be positive, got {t}")));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::shape("samples have different lengths"));
    }
    let dist = pairwise_sq_distances(samples);
    let nbrs = knn_indices(&dist, k);
    let mut weights = DMatrix::zeros(n, n);
    for (i, list) in nbrs.iter().enumerate() {
        for &j in list {
            let w = (-dist[(i, j)] / t).exp();
            weights[(i, j)] = w;
            weights[(j, i)] = w;
        }
    }
    let (degrees, laplacian) = laplacian(&weights);
    Ok(AffinityGraph {
        weights,
        degrees,
        laplacian,
        k,
        t,
    })
}

/// Mean squared distance from each sample to its k-th nearest neighbour.
///
/// A scale-aware default for the kernel width when none is configured.
pub fn suggest_kernel_width(samples: &[&[f64]], k: usize) -> Result<f64> {
    let n = samples.len();
    if n < 2 || k == 0 || k >= n {
        return Err(Error::invalid(format!("need 1 ≤ k < N, got k={k}, N={n}")));
    }
    let dist = pairwise_sq_distances(samples);
    let nbrs = knn_indices(&dist, k);
    let mean = nbrs
        .iter()
        .enumerate()
        .map(|(i, list)| dist[(i, *list.last().unwrap())])
        .sum::<f64>()
        / n as f64;
    Ok(if mean > 0.0 { mean } else { 1.0 })
}

/// Reweights `graph` with distances between the projections `map(x_i)`.
pub fn reweight(graph: &AffinityGraph, map: &TtMap, samples: &[DenseTensor], epsilon: f64) -> Result<ReweightedGraph> {
    if samples.len() != graph.len() {
        return Err(Error::shape(format!(
            "graph has {} nodes but {} samples were given",
            graph.len(),
            samples.len()
        )));
    }
    let proj = map.apply_batch(samples)?;
    reweight_with_projections(graph, &proj, epsilon)
}

/// Same as [`reweight`] given the `R × N` matrix of projections.
pub fn reweight_with_projections(graph: &AffinityGraph, proj: &DMatrix<f64>, epsilon: f64) -> Result<ReweightedGraph> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let n = graph.len();
    if proj.ncols() != n {
        return Err(Error::shape(format!("{} projections for {n} nodes", proj.ncols())));
    }
    let mut weights = DMatrix::zeros(n, n);
    let mut guarded_pairs = 0;
    for (i, j, s) in graph.edges() {
        let d = (proj.column(i) - proj.column(j)).norm();
        if d < epsilon {
            guarded_pairs += 1;
        }
        let w = s / d.max(epsilon);
        weights[(i, j)] = w;
        weights[(j, i)] = w;
    }
    let (degrees, laplacian) = laplacian(&weights);
    Ok(ReweightedGraph {
        weights,
        degrees,
        laplacian,
        epsilon,
        guarded_pairs,
    })
}
