//! Optimisation on the Stiefel manifold `St(m, r) = {M ∈ ℝ^{m×r} : MᵀM = I}`.
//!
//! Two kernels cover every per-core subproblem of the trainer:
//!
//! - [`min_quadratic_on_stiefel`]: `min vec(M)ᵀ H vec(M)` over `St(m, r)`, by
//!   Riemannian gradient descent with Armijo backtracking and a QR retraction.
//! - [`min_trace_on_stiefel`]: `min tr(Mᵀ H M)`, solved exactly by the
//!   eigenvectors of the `r` algebraically smallest eigenvalues.
//!
//! Tangent projection is `P_M(G) = G − M·sym(MᵀG)` with `sym(A) = (A + Aᵀ)/2`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Orthonormality tolerance every point on the manifold is held to.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub max_inner_iters: usize,
    /// Stop once the Riemannian gradient norm of the normalised problem
    /// (`H` scaled to unit Frobenius norm) drops below this.
    pub gradient_tolerance: f64,
    pub initial_step: f64,
    pub backtracking_factor: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_inner_iters: 200,
            gradient_tolerance: 1e-6,
            initial_step: 1.0,
            backtracking_factor: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 60,
            seed: 0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::invalid("gradient_tolerance must be positive"));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::invalid("initial_step must be positive"));
        }
        if !(self.backtracking_factor > 0.0 && self.backtracking_factor < 1.0) {
            return Err(Error::invalid("backtracking_factor must lie in (0, 1)"));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::invalid("sufficient_decrease must lie in (0, 1)"));
        }
        if self.max_backtracks == 0 {
            return Err(Error::invalid("max_backtracks must be positive"));
        }
        Ok(())
    }
}

/// A matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    matrix: DMatrix<f64>,
}

impl StiefelPoint {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() < matrix.ncols() {
            return Err(Error::shape(format!(
                "a Stiefel point needs rows ≥ columns, got {}×{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let defect = orthonormality_defect(&matrix);
        if defect > ORTHONORMALITY_TOL {
            return Err(Error::invalid(format!("columns are not orthonormal (defect {defect:.3e})")));
        }
        Ok(Self { matrix })
    }

    /// Orthonormal factor of an arbitrary full-column-rank matrix.
    pub fn from_factor(m: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            matrix: orthonormal_factor(m)?,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn defect(&self) -> f64 {
        orthonormality_defect(&self.matrix)
    }
}

pub fn orthonormality_defect(m: &DMatrix<f64>) -> f64 {
    let r = m.ncols();
    (m.tr_mul(m) - DMatrix::identity(r, r)).norm()
}

pub fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn skew(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a - a.transpose()) * 0.5
}

/// Q factor of a thin QR factorisation with the diagonal of R made positive.
pub fn orthonormal_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if rows < cols {
        return Err(Error::shape(format!("need rows ≥ columns, got {rows}×{cols}")));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::RankDeficient("matrix has non-finite entries".into()));
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    let scale = (0..cols).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    for j in 0..cols {
        let d = r[(j, j)];
        if d.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) || d == 0.0 {
            return Err(Error::RankDeficient(format!("column {j} is numerically dependent")));
        }
        if d < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// Projects a Euclidean gradient onto the tangent space at `point`.
pub fn riemannian_grad(point: &StiefelPoint, euclid_grad: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = &point.matrix;
    if m.shape() != euclid_grad.shape() {
        return Err(Error::shape(format!(
            "gradient is {:?} but the point is {:?}",
            euclid_grad.shape(),
            m.shape()
        )));
    }
    Ok(euclid_grad - m * sym(&m.tr_mul(euclid_grad)))
}

/// QR retraction `qf(M + step·tangent)`.
pub fn retract(point: &StiefelPoint, tangent: &DMatrix<f64>, step: f64) -> Result<StiefelPoint> {
    let m = &point.matrix;
    if m.shape() != tangent.shape() {
        return Err(Error::shape(format!(
            "tangent is {:?} but the point is {:?}",
            tangent.shape(),
            m.shape()
        )));
    }
    let normal = sym(&m.tr_mul(tangent)).norm();
    if normal > ORTHONORMALITY_TOL * tangent.norm().max(1.0) {
        return Err(Error::invalid(format!("direction is not tangent (normal part {normal:.3e})")));
    }
    if step == 0.0 {
        return Ok(point.clone());
    }
    StiefelPoint::from_factor(&(m + tangent * step))
}

/// `vec(M)ᵀ H vec(M)`, with `vec` stacking columns.
pub fn quadratic_objective(h: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    let v = DVector::from_column_slice(m.as_slice());
    v.dot(&(h * &v))
}

#[derive(Debug, Clone)]
pub struct QuadraticSolution {
    pub point: StiefelPoint,
    /// Objective in the units of the caller's `H`.
    pub objective: f64,
    pub iterations: usize,
    /// Riemannian gradient norm of the normalised problem at the returned point.
    pub grad_norm: f64,
    pub converged: bool,
}

/// Minimises `vec(U)ᵀ H vec(U)` over cores `U` of shape `(left_rank, mode_size, right_rank)`
/// whose left unfolding has orthonormal columns.
///
/// The left unfolding is column-major, so `vec(U)` is exactly the column stack of
/// the `(left_rank·mode_size) × right_rank` matrix the manifold lives on. `H` is
/// symmetrised and scaled to unit Frobenius norm before descent; the minimiser is
/// unchanged. Accepted steps never increase the objective.
pub fn min_quadratic_on_stiefel(
    h: &DMatrix<f64>,
    shape: (usize, usize, usize),
    init: &StiefelPoint,
    settings: &SolverSettings,
) -> Result<QuadraticSolution> {
    settings.validate()?;
    let (rl, mode, rr) = shape;
    let n = rl * mode * rr;
    if h.shape() != (n, n) {
        return Err(Error::shape(format!(
            "H is {:?}, expected {n}×{n} for core shape {shape:?}",
            h.shape()
        )));
    }
    if init.matrix.shape() != (rl * mode, rr) {
        return Err(Error::shape(format!(
            "initial point is {:?}, expected {}×{rr}",
            init.matrix.shape(),
            rl * mode
        )));
    }
    let defect = init.defect();
    if defect > ORTHONORMALITY_TOL {
        return Err(Error::invalid(format!("initial point infeasible (defect {defect:.3e})")));
    }

    let hs = sym(h);
    let scale = hs.norm();
    let mut point = init.clone();
    if scale == 0.0 || !scale.is_finite() {
        if !scale.is_finite() {
            return Err(Error::Singular("H has non-finite entries".into()));
        }
        return Ok(QuadraticSolution {
            point,
            objective: 0.0,
            iterations: 0,
            grad_norm: 0.0,
            converged: true,
        });
    }
    let hn = hs / scale;

    let mut f = quadratic_objective(&hn, &point.matrix);
    let mut iterations = 0;
    let mut grad_norm;
    let mut converged = false;
    loop {
        let v = DVector::from_column_slice(point.matrix.as_slice());
        let eg = &hn * v * 2.0;
        let eg = DMatrix::from_column_slice(rl * mode, rr, eg.as_slice());
        let grad = riemannian_grad(&point, &eg)?;
        grad_norm = grad.norm();
        if grad_norm <= settings.gradient_tolerance {
            converged = true;
            break;
        }
        if iterations >= settings.max_inner_iters {
            break;
        }
        let direction = -grad;
        let slope = grad_norm * grad_norm;
        let mut step = settings.initial_step;
        let mut accepted = None;
        for _ in 0..settings.max_backtracks {
            let cand = retract(&point, &direction, step)?;
            let fc = quadratic_objective(&hn, &cand.matrix);
            if fc <= f - settings.sufficient_decrease * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= settings.backtracking_factor;
        }
        match accepted {
            Some((cand, fc)) => {
                point = cand;
                f = fc;
                iterations += 1;
            }
            // no step gives sufficient decrease: numerically stationary
            None => break,
        }
    }
    Ok(QuadraticSolution {
        objective: f * scale,
        point,
        iterations,
        grad_norm,
        converged,
    })
}

#[derive(Debug, Clone)]
pub struct TraceSolution {
    /// `m × r`, columns are eigenvectors ordered by ascending eigenvalue.
    pub basis: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub objective: f64,
}

/// Exact minimiser of `tr(Mᵀ H M)` over `St(m, r)`.
///
/// Eigenvalue ties keep the solver's order after a stable ascending sort; each
/// eigenvector is signed so its first entry of magnitude above `1e-12` is positive.
pub fn min_trace_on_stiefel(h: &DMatrix<f64>, r: usize) -> Result<TraceSolution> {
    let (rows, cols) = h.shape();
    if rows != cols {
        return Err(Error::shape(format!("H must be square, got {rows}×{cols}")));
    }
    if r > rows {
        return Err(Error::invalid(format!("cannot take {r} columns from a {rows}×{rows} matrix")));
    }
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular("H has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(sym(h));
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut basis = DMatrix::zeros(rows, r);
    let mut eigenvalues = Vec::with_capacity(r);
    for (j, &idx) in order.iter().take(r).enumerate() {
        let mut col = eig.eigenvectors.column(idx).into_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        basis.set_column(j, &col);
        eigenvalues.push(eig.eigenvalues[idx]);
    }
    let objective = eigenvalues.iter().sum();
    Ok(TraceSolution {
        basis,
        eigenvalues,
        objective,
    })
}
