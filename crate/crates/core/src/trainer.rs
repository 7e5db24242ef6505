//! Fitting a tensor-train map by alternating Stiefel subproblems.
//!
//! Each outer iteration reweights the affinity graph with the current
//! projections, then sweeps the cores in order `0..n`. Core `k` sees the
//! other cores as fixed, which makes the surrogate a quadratic form in
//! `vec(U_k)`:
//!
//! ```text
//! ½ Σ_ij ‖t_i − t_j‖² s̃_ij = Σ_r  vec(U_k)ᵀ Y_k(r) L̃ Y_k(r)ᵀ vec(U_k) = vec(U_k)ᵀ H_k vec(U_k)
//! ```
//!
//! where column `i` of `Y_k(r)` is sample `i` contracted with every core but
//! `U_k` and then restricted to output component `r`. For the last core the
//! output index is a column of `L(U_n)`, so the subproblem is a trace
//! minimisation solved by eigen-decomposition. `H_k` is only
//! `(R_{k-1} I_k R_k)²`; the `D × D` matrix `X L̃ Xᵀ` is never formed.
//!
//! Core indices are zero-based throughout this module.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{self, AffinityGraph, ReweightedGraph};
use crate::stiefel::{self, SolverSettings, StiefelPoint};
use crate::tensor::DenseTensor;
use crate::ttmap::{self, contract_cores, prefix_chain, suffix_chain, TtCore, TtMap};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Inner ranks `R_1,…,R_{n-1}`.
    pub ranks: Vec<usize>,
    pub target_dim: usize,
    pub neighbors: usize,
    /// Heat-kernel width `t`; `None` picks the mean squared k-th neighbour distance.
    pub kernel_width: Option<f64>,
    pub epsilon: f64,
    pub max_outer_iters: usize,
    /// Relative change of the objective below which training stops.
    pub outer_tolerance: f64,
    pub solver: SolverSettings,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ranks: Vec::new(),
            target_dim: 2,
            neighbors: 5,
            kernel_width: None,
            epsilon: graph::DEFAULT_EPSILON,
            max_outer_iters: 15,
            outer_tolerance: 1e-6,
            solver: SolverSettings::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Checks the config against the sample mode sizes.
    ///
    /// Returns advisory warnings (ranks at or above their mode size) on success.
    pub fn validate(&self, mode_sizes: &[usize]) -> Result<Vec<String>> {
        let ranks = ttmap::full_ranks(mode_sizes, &self.ranks, self.target_dim)?;
        ttmap::check_rank_feasibility(mode_sizes, &ranks)?;
        if self.max_outer_iters == 0 {
            return Err(Error::invalid("max_outer_iters must be at least 1"));
        }
        if self.neighbors == 0 {
            return Err(Error::invalid("neighbors must be at least 1"));
        }
        if let Some(t) = self.kernel_width {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::invalid(format!("kernel width must be positive, got {t}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(self.outer_tolerance >= 0.0) {
            return Err(Error::invalid("outer_tolerance must be nonnegative"));
        }
        self.solver.validate()?;
        Ok(self
            .ranks
            .iter()
            .enumerate()
            .filter(|&(k, &r)| r >= mode_sizes[k])
            .map(|(k, &r)| format!("rank R_{} = {r} is not below mode size I_{} = {}", k + 1, k + 1, mode_sizes[k]))
            .collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Unsquared objective of the initial map.
    pub initial_objective: f64,
    /// Unsquared objective after each outer iteration.
    pub objective: Vec<f64>,
    /// Squared surrogate (with that iteration's reweighted graph) after each sweep.
    pub surrogate: Vec<f64>,
    /// Inner solver iterations per core, per outer iteration.
    pub inner_iterations: Vec<Vec<usize>>,
    /// `‖EᵀE − I‖_F` after each outer iteration.
    pub defect: Vec<f64>,
    pub seconds: Vec<f64>,
    pub kernel_width: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl TrainTrace {
    /// `iteration,objective,surrogate,defect,seconds`; iteration 0 is the initial map.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,objective,surrogate,defect,seconds\n");
        out.push_str(&format!("0,{},,,\n", self.initial_objective));
        for i in 0..self.objective.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i + 1,
                self.objective[i],
                self.surrogate[i],
                self.defect[i],
                self.seconds[i]
            ));
        }
        out
    }
}

/// `U_0 ⋯ U_{k-1}` as a tensor `I_0 × ⋯ × I_{k-1} × R_k`. Undefined for `k = 0`.
pub fn partial_left(map: &TtMap, k: usize) -> Result<DenseTensor> {
    if k == 0 || k > map.order() {
        return Err(Error::invalid(format!(
            "left partial chain needs 1 ≤ k ≤ {}, got {k}",
            map.order()
        )));
    }
    let m = prefix_chain(&map.cores()[..k]);
    let mut shape: Vec<usize> = map.cores()[..k].iter().map(TtCore::mode_size).collect();
    shape.push(m.ncols());
    DenseTensor::new(shape, m.as_slice().to_vec())
}

/// `U_{k+1} ⋯ U_{n-1}` as a tensor `R_{k+1} × I_{k+1} × ⋯ × I_{n-1} × R_n`.
/// Undefined for the last core.
pub fn partial_right(map: &TtMap, k: usize) -> Result<DenseTensor> {
    let n = map.order();
    if k + 1 >= n {
        return Err(Error::invalid(format!(
            "right partial chain needs 0 ≤ k ≤ {}, got {k}",
            n.saturating_sub(2)
        )));
    }
    let tail = &map.cores()[k + 1..];
    let m = suffix_chain(tail);
    let mut shape = vec![tail[0].left_rank()];
    shape.extend(tail.iter().map(TtCore::mode_size));
    shape.push(map.target_dim());
    DenseTensor::new(shape, m.as_slice().to_vec())
}

/// Samples stacked along a trailing mode: `I_0 × ⋯ × I_{n-1} × N`.
pub fn stack_samples(samples: &[DenseTensor]) -> Result<DenseTensor> {
    let first = samples.first().ok_or_else(|| Error::invalid("no samples"))?;
    let mut data = Vec::with_capacity(first.len() * samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.shape() != first.shape() {
            return Err(Error::shape(format!(
                "sample {i} has shape {:?}, expected {:?}",
                s.shape(),
                first.shape()
            )));
        }
        data.extend_from_slice(s.data());
    }
    let mut shape = first.shape().to_vec();
    shape.push(samples.len());
    DenseTensor::new(shape, data)
}

/// Data contracted with every core except core `k`.
///
/// Tensor layout (first mode fastest):
///
/// - interior or first core: `[R_k, I_k, R_{k+1}, R_n, N]`, with the leading
///   `R_0 = 1` dropped for `k = 0`;
/// - last core: `[R_{n-1}, I_{n-1}, N]` (just `[I_0, N]` for a single-core map).
///
/// Either way, the `block_rows = R_k·I_k·R_{k+1}` leading entries of slice
/// `(r, i)` line up with `vec(U_k)`, and `vec(U_k) · Y(:, r, i) = t_i[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedData {
    pub tensor: DenseTensor,
    pub core: usize,
    /// Length of `vec(U_k)`.
    pub block_rows: usize,
    /// `R_n` for interior/first cores; 1 for the last core.
    pub slices: usize,
    pub samples: usize,
}

impl TransformedData {
    /// `Y_k(r)` as a `block_rows × N` matrix.
    pub fn slice_matrix(&self, r: usize) -> DMatrix<f64> {
        let (m, s) = (self.block_rows, self.slices);
        let data = self.tensor.data();
        DMatrix::from_fn(m, self.samples, |row, i| data[row + m * (r + s * i)])
    }
}

pub fn transformed_data(x: &DenseTensor, map: &TtMap, k: usize) -> Result<TransformedData> {
    let n = map.order();
    if k >= n {
        return Err(Error::invalid(format!("core index {k} out of range for {n} cores")));
    }
    let modes = map.mode_sizes();
    if x.order() != n + 1 || x.shape()[..n] != modes[..] {
        return Err(Error::shape(format!(
            "data shape {:?} does not match map modes {modes:?} plus a sample mode",
            x.shape()
        )));
    }
    let samples = x.shape()[n];
    let core = map.core(k);
    let (rl, ik, rr) = (core.left_rank(), core.mode_size(), core.right_rank());
    let rows = rl * ik;

    // [R_k, I_k, I_{k+1}, …, N] after sweeping the cores to the left
    let z = contract_cores(x.data(), &map.cores()[..k]);
    let z = z.as_slice();

    let lead: Vec<usize> = if rl == 1 { vec![ik] } else { vec![rl, ik] };
    if k + 1 == n {
        let mut shape = lead;
        shape.push(samples);
        return Ok(TransformedData {
            tensor: DenseTensor::new(shape, z.to_vec())?,
            core: k,
            block_rows: rows,
            slices: 1,
            samples,
        });
    }

    let rn = map.target_dim();
    let tail = suffix_chain(&map.cores()[k + 1..]);
    let q = tail.ncols() / rn;
    // reorder [R_{k+1}, Q, R_n] into a Q × (R_{k+1}·R_n) matrix
    let tail_data = tail.as_slice();
    let tail_perm = DMatrix::from_fn(q, rr * rn, |qi, col| {
        let (b, r) = (col % rr, col / rr);
        tail_data[b + rr * (qi + q * r)]
    });

    let per_sample = rows * q;
    let blocks: Vec<DMatrix<f64>> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let zs = DMatrix::from_column_slice(rows, q, &z[s * per_sample..(s + 1) * per_sample]);
            zs * &tail_perm
        })
        .collect();
    let mut data = Vec::with_capacity(rows * rr * rn * samples);
    for b in &blocks {
        data.extend_from_slice(b.as_slice());
    }
    let mut shape = lead;
    shape.extend([rr, rn, samples]);
    Ok(TransformedData {
        tensor: DenseTensor::new(shape, data)?,
        core: k,
        block_rows: rows * rr,
        slices: rn,
        samples,
    })
}

/// `H_k = Σ_r Y_k(r) L̃ Y_k(r)ᵀ`, symmetrised.
pub fn assemble_h(y: &TransformedData, laplacian: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if laplacian.shape() != (y.samples, y.samples) {
        return Err(Error::shape(format!(
            "Laplacian is {:?} but the data has {} samples",
            laplacian.shape(),
            y.samples
        )));
    }
    let parts: Vec<DMatrix<f64>> = (0..y.slices)
        .into_par_iter()
        .map(|r| {
            let yr = y.slice_matrix(r);
            &yr * laplacian * yr.transpose()
        })
        .collect();
    let mut h = DMatrix::zeros(y.block_rows, y.block_rows);
    for p in &parts {
        h += p;
    }
    Ok(stiefel::sym(&h))
}

/// `½ Σ_ij ‖t_i − t_j‖₂ s_ij` for projections given as columns.
pub fn objective_from_projections(proj: &DMatrix<f64>, graph: &AffinityGraph) -> f64 {
    graph
        .edges()
        .iter()
        .map(|&(i, j, s)| (proj.column(i) - proj.column(j)).norm() * s)
        .sum()
}

/// Unsquared locality objective of `map` on `samples`.
pub fn objective_fnorm(samples: &[DenseTensor], map: &TtMap, graph: &AffinityGraph) -> Result<f64> {
    if samples.len() != graph.len() {
        return Err(Error::shape(format!("{} samples for a {}-node graph", samples.len(), graph.len())));
    }
    Ok(objective_from_projections(&map.apply_batch(samples)?, graph))
}

/// `½ Σ_ij ‖t_i − t_j‖² s̃_ij = tr(T L̃ Tᵀ)`.
pub fn surrogate_from_projections(proj: &DMatrix<f64>, graph: &ReweightedGraph) -> f64 {
    graph
        .edges()
        .iter()
        .map(|&(i, j, s)| (proj.column(i) - proj.column(j)).norm_squared() * s)
        .sum()
}

/// Solves the subproblem for core `k` given its `H_k`; returns the new core and inner iterations.
pub fn solve_core(map: &TtMap, k: usize, h: &DMatrix<f64>, settings: &SolverSettings) -> Result<(TtCore, usize)> {
    let core = map.core(k);
    let (rl, ik, rr) = (core.left_rank(), core.mode_size(), core.right_rank());
    if k + 1 == map.order() {
        let sol = stiefel::min_trace_on_stiefel(h, rr)?;
        return Ok((TtCore::from_left_unfolding(&sol.basis, rl, ik)?, 1));
    }
    let init = StiefelPoint::from_factor(&core.left_unfold())?;
    let sol = stiefel::min_quadratic_on_stiefel(h, (rl, ik, rr), &init, settings)?;
    Ok((TtCore::from_left_unfolding(sol.point.matrix(), rl, ik)?, sol.iterations))
}

/// Fits a tensor-train map to `samples`.
///
/// With `solver.max_inner_iters == 0` the cores are never updated (the
/// closed-form last-core solve included) and the random initialisation is
/// returned after one recorded iteration.
pub fn fit(samples: &[DenseTensor], config: &TrainConfig) -> Result<(TtMap, TrainTrace)> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {}", samples.len())));
    }
    let x = stack_samples(samples)?;
    let modes = samples[0].shape().to_vec();
    let warnings = config.validate(&modes)?;
    if config.neighbors >= samples.len() {
        return Err(Error::invalid(format!(
            "neighbors = {} needs more than {} samples",
            config.neighbors,
            samples.len()
        )));
    }
    let t = match config.kernel_width {
        Some(t) => t,
        None => {
            let flat: Vec<&[f64]> = samples.iter().map(DenseTensor::data).collect();
            graph::suggest_kernel_width(&flat, config.neighbors)?
        }
    };
    let graph = graph::build_affinity(samples, config.neighbors, t)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = TtMap::random_orthonormal(&modes, &config.ranks, config.target_dim, &mut rng)?;
    let (map, mut trace) = fit_from(&x, &graph, init, config)?;
    trace.warnings = warnings;
    Ok((map, trace))
}

/// Runs the outer loop from a given starting map and fixed graph.
pub fn fit_from(x: &DenseTensor, graph: &AffinityGraph, mut map: TtMap, config: &TrainConfig) -> Result<(TtMap, TrainTrace)> {
    let n = map.order();
    let mut proj = contract_cores(x.data(), map.cores());
    let mut trace = TrainTrace {
        initial_objective: objective_from_projections(&proj, graph),
        kernel_width: graph.t(),
        ..TrainTrace::default()
    };
    let mut previous = trace.initial_objective;

    for _ in 0..config.max_outer_iters {
        let started = Instant::now();
        let reweighted = graph::reweight_with_projections(graph, &proj, config.epsilon)?;
        let mut inner = vec![0; n];
        if config.solver.max_inner_iters > 0 {
            for (k, count) in inner.iter_mut().enumerate() {
                let y = transformed_data(x, &map, k)?;
                let h = assemble_h(&y, reweighted.laplacian())?;
                let (core, iters) = solve_core(&map, k, &h, &config.solver).map_err(|e| Error::Solver {
                    core: k,
                    source: Box::new(e),
                })?;
                map.set_core(k, core)?;
                *count = iters;
            }
        }
        proj = contract_cores(x.data(), map.cores());
        let objective = objective_from_projections(&proj, graph);
        trace.objective.push(objective);
        trace.surrogate.push(surrogate_from_projections(&proj, &reweighted));
        trace.inner_iterations.push(inner);
        trace.defect.push(map.orthonormality_defect());
        trace.seconds.push(started.elapsed().as_secs_f64());

        let change = (previous - objective).abs();
        if change <= config.outer_tolerance * previous.abs().max(f64::MIN_POSITIVE) {
            trace.converged = true;
            break;
        }
        previous = objective;
    }
    Ok((map, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ttmap::tests::random_map;
    use crate::ttmap::DEFAULT_ELEMENT_CAP;
    use rand::Rng;

    fn random_samples(n: usize, shape: &[usize], seed: u64) -> Vec<DenseTensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap())
            .collect()
    }

    fn slice_product(cores: &[TtCore], idx: &[usize]) -> DMatrix<f64> {
        let mut acc = DMatrix::from_element(1, 1, 1.0);
        for (c, &i) in cores.iter().zip(idx) {
            acc *= c.slice(i);
        }
        acc
    }

    #[test]
    fn partial_left_of_two_is_first_core() {
        let map = random_map(&[3, 4, 2], &[1, 2, 3, 2], 1);
        let t = partial_left(&map, 1).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), map.core(0).data());
        assert!(partial_left(&map, 0).is_err());
    }

    #[test]
    fn partial_left_matches_slice_products() {
        let map = random_map(&[3, 4, 2], &[1, 2, 3, 2], 2);
        let t = partial_left(&map, 2).unwrap();
        assert_eq!(t.shape(), &[3, 4, 3]);
        for i in 0..3 {
            for j in 0..4 {
                let p = slice_product(&map.cores()[..2], &[i, j]);
                for r in 0..3 {
                    assert!((t.get(&[i, j, r]).unwrap() - p[(0, r)]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn partial_right_single_core_suffix() {
        let map = random_map(&[3, 4, 2], &[1, 2, 3, 2], 3);
        let t = partial_right(&map, 1).unwrap();
        assert_eq!(t.shape(), &[3, 2, 2]);
        assert_eq!(t.data(), map.core(2).data());
        assert!(partial_right(&map, 2).is_err());
    }

    #[test]
    fn partial_right_matches_slice_products() {
        let map = random_map(&[3, 4, 2], &[1, 2, 3, 2], 4);
        let t = partial_right(&map, 0).unwrap();
        assert_eq!(t.shape(), &[2, 4, 2, 2]);
        for a in 0..2 {
            for j in 0..4 {
                for l in 0..2 {
                    let p = map.core(1).slice(j) * map.core(2).slice(l);
                    for r in 0..2 {
                        assert!((t.get(&[a, j, l, r]).unwrap() - p[(a, r)]).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn identity_slices_give_indicator_partials() {
        // cores with U(:, i, :) = I: every partial chain entry is 0 or 1
        let eye = |m: usize| {
            let mut data = vec![0.0; 2 * m * 2];
            for i in 0..m {
                for a in 0..2 {
                    data[a + 2 * (i + m * a)] = 1.0;
                }
            }
            TtCore::from_data(2, m, 2, data).unwrap()
        };
        let first = TtCore::from_data(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let map = TtMap::new(vec![first, eye(3), eye(2)]).unwrap();
        let left = partial_left(&map, 2).unwrap();
        let right = partial_right(&map, 0).unwrap();
        for v in left.data().iter().chain(right.data()) {
            assert!(*v == 0.0 || *v == 1.0);
        }
        assert_eq!(right.get(&[1, 2, 0, 1]).unwrap(), 1.0);
        assert_eq!(right.get(&[1, 2, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn single_core_transformed_data_is_data() {
        let map = random_map(&[6], &[1, 2], 5);
        let samples = random_samples(4, &[6], 6);
        let x = stack_samples(&samples).unwrap();
        let y = transformed_data(&x, &map, 0).unwrap();
        assert_eq!(y.tensor.shape(), &[6, 4]);
        assert_eq!(y.tensor.data(), x.data());
    }

    #[test]
    fn transformed_data_reconstructs_apply() {
        let map = random_map(&[3, 4, 2], &[1, 2, 3, 2], 7);
        let samples = random_samples(5, &[3, 4, 2], 8);
        let x = stack_samples(&samples).unwrap();
        for k in 0..3 {
            let y = transformed_data(&x, &map, k).unwrap();
            let v = map.core(k).tensor().vectorize();
            for (i, s) in samples.iter().enumerate() {
                let t = map.apply(s).unwrap();
                if y.slices == 1 {
                    // last core: Y(:, :, i) against L(U_n) gives all of t_i
                    let yi = DMatrix::from_fn(y.block_rows, 1, |r, _| y.tensor.data()[r + y.block_rows * i]);
                    let ti = map.core(k).left_unfold().tr_mul(&yi);
                    for r in 0..t.len() {
                        assert!((ti[(r, 0)] - t[r]).abs() <= 1e-10 * t[r].abs().max(1.0));
                    }
                } else {
                    for (r, tr) in t.iter().enumerate() {
                        let col = y.slice_matrix(r).column(i).into_owned();
                        let got = v.dot(&col);
                        assert!((got - tr).abs() <= 1e-10 * tr.abs().max(1.0), "k={k} i={i} r={r}");
                    }
                }
            }
        }
        let y0 = transformed_data(&x, &map, 0).unwrap();
        assert_eq!(y0.tensor.shape(), &[3, 2, 2, 5]);
        let y1 = transformed_data(&x, &map, 1).unwrap();
        assert_eq!(y1.tensor.shape(), &[2, 4, 3, 2, 5]);
        let y2 = transformed_data(&x, &map, 2).unwrap();
        assert_eq!(y2.tensor.shape(), &[3, 2, 5]);
    }

    #[test]
    fn zero_data_transforms_to_zero() {
        let map = random_map(&[3, 4, 2], &[1, 2, 3, 2], 9);
        let x = DenseTensor::zeros(&[3, 4, 2, 3]).unwrap();
        for k in 0..3 {
            assert!(transformed_data(&x, &map, k).unwrap().tensor.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn transformed_data_shape_errors() {
        let map = random_map(&[3, 4], &[1, 2, 2], 10);
        assert!(transformed_data(&DenseTensor::zeros(&[4, 3, 2]).unwrap(), &map, 0).is_err());
        assert!(transformed_data(&DenseTensor::zeros(&[3, 4, 2]).unwrap(), &map, 2).is_err());
    }

    /// H through the explicit mapping: H = Σ_r G(r)ᵀ (X L Xᵀ) G(r),
    /// with G(r) column m the r-th mapping column when core k is the m-th unit core.
    pub(crate) fn naive_h(map: &TtMap, k: usize, samples: &[DenseTensor], l: &DMatrix<f64>) -> DMatrix<f64> {
        let core = map.core(k);
        let last = k + 1 == map.order();
        let (rl, ik) = (core.left_rank(), core.mode_size());
        let rr = if last { 1 } else { core.right_rank() };
        let m = rl * ik * rr;
        let d = map.input_dim();
        let xmat = DMatrix::from_fn(d, samples.len(), |r, c| samples[c].data()[r]);
        let z = &xmat * l * xmat.transpose();
        let slices = if last { 1 } else { map.target_dim() };
        let mut g = vec![DMatrix::zeros(d, m); slices];
        for idx in 0..m {
            let mut data = vec![0.0; m];
            data[idx] = 1.0;
            let unit = TtCore::from_data(rl, ik, rr, data).unwrap();
            let mut cores = map.cores().to_vec();
            cores[k] = unit;
            let e = TtMap::new(cores)
                .unwrap()
                .full_chain(DEFAULT_ELEMENT_CAP)
                .unwrap()
                .left_unfold()
                .unwrap();
            for (r, gr) in g.iter_mut().enumerate() {
                gr.set_column(idx, &e.column(r));
            }
        }
        g.iter().fold(DMatrix::zeros(m, m), |acc, gr| acc + gr.transpose() * &z * gr)
    }

    #[test]
    fn h_matches_naive_construction() {
        let samples = random_samples(12, &[4, 3, 2], 11);
        let g = graph::build_affinity(&samples, 3, 2.0).unwrap();
        let map = random_map(&[4, 3, 2], &[1, 2, 3, 2], 12);
        let rw = graph::reweight(&g, &map, &samples, 1e-8).unwrap();
        let x = stack_samples(&samples).unwrap();
        for k in 0..3 {
            let y = transformed_data(&x, &map, k).unwrap();
            let h = assemble_h(&y, rw.laplacian()).unwrap();
            let naive = naive_h(&map, k, &samples, rw.laplacian());
            assert!((&h - &naive).norm() <= 1e-9 * naive.norm());
        }
    }

    #[test]
    fn zero_laplacian_gives_zero_h() {
        let samples = random_samples(5, &[3, 2], 13);
        let map = random_map(&[3, 2], &[1, 2, 2], 14);
        let x = stack_samples(&samples).unwrap();
        let y = transformed_data(&x, &map, 0).unwrap();
        let h = assemble_h(&y, &DMatrix::zeros(5, 5)).unwrap();
        assert_eq!(h, DMatrix::zeros(6, 6));
        assert!(assemble_h(&y, &DMatrix::zeros(4, 4)).is_err());
    }

    #[test]
    fn two_sample_h_closed_form() {
        let samples = random_samples(2, &[3, 2], 15);
        let map = random_map(&[3, 2], &[1, 2, 2], 16);
        let x = stack_samples(&samples).unwrap();
        let w = 0.7;
        let l = DMatrix::from_row_slice(2, 2, &[w, -w, -w, w]);
        let y = transformed_data(&x, &map, 0).unwrap();
        let h = assemble_h(&y, &l).unwrap();
        let mut want = DMatrix::zeros(6, 6);
        for r in 0..2 {
            let yr = y.slice_matrix(r);
            let diff = yr.column(0) - yr.column(1);
            want += &diff * diff.transpose() * w;
        }
        assert!((h - want).norm() < 1e-12);
    }

    #[test]
    fn quadratic_form_equals_surrogate() {
        let samples = random_samples(12, &[4, 3, 2], 17);
        let g = graph::build_affinity(&samples, 3, 2.0).unwrap();
        let map = random_map(&[4, 3, 2], &[1, 2, 3, 2], 18);
        let rw = graph::reweight(&g, &map, &samples, 1e-8).unwrap();
        let proj = map.apply_batch(&samples).unwrap();
        let want = surrogate_from_projections(&proj, &rw);
        let x = stack_samples(&samples).unwrap();
        for k in 0..3 {
            let y = transformed_data(&x, &map, k).unwrap();
            let h = assemble_h(&y, rw.laplacian()).unwrap();
            let got = if k == 2 {
                let l = map.core(k).left_unfold();
                (l.transpose() * &h * &l).trace()
            } else {
                stiefel::quadratic_objective(&h, &map.core(k).left_unfold())
            };
            assert!((got - want).abs() <= 1e-8 * want.abs(), "k={k} {got} vs {want}");
        }
    }

    #[test]
    fn objective_examples() {
        let same = vec![DenseTensor::new(vec![2, 2], vec![1.0; 4]).unwrap(); 3];
        let g = graph::build_affinity(&same, 1, 1.0).unwrap();
        let map = random_map(&[2, 2], &[1, 2, 2], 19);
        assert_eq!(objective_fnorm(&same, &map, &g).unwrap(), 0.0);

        let two = random_samples(2, &[2, 2], 20);
        let g = graph::build_affinity(&two, 1, 1e300).unwrap();
        assert_eq!(g.weights()[(0, 1)], 1.0);
        let proj = map.apply_batch(&two).unwrap();
        let d = (proj.column(0) - proj.column(1)).norm();
        assert!((objective_fnorm(&two, &map, &g).unwrap() - d).abs() < 1e-15);
    }

    #[test]
    fn objective_matches_double_loop() {
        let samples = random_samples(20, &[3, 3], 21);
        let g = graph::build_affinity(&samples, 4, 1.0).unwrap();
        let map = random_map(&[3, 3], &[1, 3, 2], 22);
        let t: Vec<Vec<f64>> = samples.iter().map(|s| map.apply(s).unwrap()).collect();
        let mut want = 0.0;
        for i in 0..20 {
            for j in 0..20 {
                let d: f64 = t[i].iter().zip(&t[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                want += 0.5 * d * g.weights()[(i, j)];
            }
        }
        let got = objective_fnorm(&samples, &map, &g).unwrap();
        assert!((got - want).abs() <= 1e-10 * want);
    }

    #[test]
    fn no_op_training_keeps_initialisation() {
        let samples = random_samples(10, &[3, 2], 23);
        let config = TrainConfig {
            ranks: vec![2],
            target_dim: 2,
            neighbors: 3,
            kernel_width: Some(1.0),
            max_outer_iters: 1,
            solver: SolverSettings {
                max_inner_iters: 0,
                ..SolverSettings::default()
            },
            seed: 4,
            ..TrainConfig::default()
        };
        let (map, trace) = fit(&samples, &config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let init = TtMap::random_orthonormal(&[3, 2], &[2], 2, &mut rng).unwrap();
        assert_eq!(map, init);
        assert_eq!(trace.objective.len(), 1);
        assert_eq!(trace.objective[0], trace.initial_objective);
    }

    #[test]
    fn zero_outer_iterations_rejected() {
        let samples = random_samples(10, &[3, 2], 24);
        let config = TrainConfig {
            ranks: vec![2],
            max_outer_iters: 0,
            ..TrainConfig::default()
        };
        assert!(fit(&samples, &config).is_err());
    }

    #[test]
    fn identical_pair_trains_without_failure() {
        let x = DenseTensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let samples = vec![x.clone(), x];
        let config = TrainConfig {
            ranks: vec![2],
            target_dim: 2,
            neighbors: 1,
            kernel_width: Some(1.0),
            max_outer_iters: 3,
            ..TrainConfig::default()
        };
        let (map, trace) = fit(&samples, &config).unwrap();
        assert!(trace.objective.iter().all(|v| v.is_finite() && *v == 0.0));
        assert!(map.orthonormality_defect() <= 1e-8);
    }

    #[test]
    fn infeasible_ranks_rejected() {
        let samples = random_samples(10, &[2, 3], 25);
        let config = TrainConfig {
            ranks: vec![3],
            ..TrainConfig::default()
        };
        assert!(matches!(fit(&samples, &config), Err(Error::InvalidArgument(_))));
        let config = TrainConfig {
            ranks: vec![2],
            target_dim: 7,
            ..TrainConfig::default()
        };
        assert!(fit(&samples, &config).is_err());
    }

    #[test]
    fn rank_above_mode_size_only_warns() {
        let warnings = TrainConfig {
            ranks: vec![4, 7, 4],
            target_dim: 2,
            ..TrainConfig::default()
        }
        .validate(&[4, 8, 4, 8])
        .unwrap();
        assert_eq!(warnings.len(), 2);
    }

    #[test]
    fn sweep_never_increases_surrogate() {
        let samples = random_samples(30, &[3, 4, 2], 26);
        let g = graph::build_affinity(&samples, 4, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let mut map = TtMap::random_orthonormal(&[3, 4, 2], &[2, 3], 2, &mut rng).unwrap();
        let x = stack_samples(&samples).unwrap();
        let rw = graph::reweight(&g, &map, &samples, 1e-8).unwrap();
        let mut last = surrogate_from_projections(&map.apply_batch(&samples).unwrap(), &rw);
        for k in 0..3 {
            let y = transformed_data(&x, &map, k).unwrap();
            let h = assemble_h(&y, rw.laplacian()).unwrap();
            let (core, _) = solve_core(&map, k, &h, &SolverSettings::default()).unwrap();
            map.set_core(k, core).unwrap();
            let now = surrogate_from_projections(&map.apply_batch(&samples).unwrap(), &rw);
            assert!(now <= last * (1.0 + 1e-10), "core {k}: {now} > {last}");
            last = now;
        }
        for d in map.core_defects() {
            assert!(d <= 1e-8);
        }
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let samples = random_samples(12, &[3, 2], 28);
        let config = TrainConfig {
            ranks: vec![2],
            neighbors: 3,
            max_outer_iters: 2,
            outer_tolerance: 0.0,
            ..TrainConfig::default()
        };
        let (_, trace) = fit(&samples, &config).unwrap();
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iteration,objective,surrogate,defect,seconds");
        assert_eq!(lines.len(), 2 + trace.objective.len());
    }
}
