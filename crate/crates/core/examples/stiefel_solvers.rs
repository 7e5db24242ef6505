//! The two orthogonality-constrained subproblems: a quadratic over one core,
//! solved by Riemannian descent, and a trace minimisation solved exactly.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttpudr::stiefel::{min_quadratic_on_stiefel, min_trace_on_stiefel, quadratic_objective};
use ttpudr::{SolverSettings, StiefelPoint};

fn main() -> ttpudr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = DMatrix::from_fn(6, 6, |_, _| rng.random::<f64>() - 0.5);
    let h = &a * a.transpose();

    let exact = min_trace_on_stiefel(&h, 2)?;
    println!("tr(MᵀHM) minimum {:.6}, eigenvalues {:?}", exact.objective, exact.eigenvalues);

    // a core of shape 2x3x1 viewed as a 6x1 orthonormal column; H acts on vec(U)
    let init = StiefelPoint::from_factor(&DMatrix::from_fn(6, 1, |_, _| rng.random::<f64>() - 0.5))?;
    let before = quadratic_objective(&h, init.matrix());
    let sol = min_quadratic_on_stiefel(&h, (2, 3, 1), &init, &SolverSettings::default())?;
    println!(
        "descent: {before:.6} -> {:.6} in {} iterations (converged {}), defect {:.1e}",
        sol.objective,
        sol.iterations,
        sol.converged,
        sol.point.defect()
    );
    println!("smallest eigenvalue for comparison: {:.6}", exact.eigenvalues[0]);
    Ok(())
}
