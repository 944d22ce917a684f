//! Base estimators: dense least squares (plain and weighted) and the
//! kernelized Gaussian-process regressor over pierce-point features.

mod gp;
mod kernel;
mod linear;

pub use gp::{
    fit_gp, fit_gp_weighted, gp_loss, predict_double_difference, predict_vtec, predict_vtec_batch,
    DesignMatrix, GpModel, PredictionMode,
};
pub use kernel::{build_kernel_matrix, kernel_eval, KernelParams, KERNEL_JITTER};
pub use linear::{
    fit_least_squares, fit_least_squares_weighted, fit_weighted_least_squares, LinearModel,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{FrrError, Result};

/// Relative smallest-eigenvalue threshold below which a system matrix is
/// treated as singular rather than silently pseudo-inverted.
pub const SINGULARITY_THRESHOLD: f64 = 1e-10;

/// Maximum relative residual accepted from any normal-equation solve.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-8;

/// Relative smallest eigenvalue lambda_min / lambda_max of a symmetric matrix.
fn relative_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Solves the symmetric positive-definite system `m x = b` by Cholesky
/// factorization, rejecting ill-conditioned systems and verifying the
/// residual afterwards. The inverse is never materialized.
fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(DVector::zeros(m.nrows()));
    }
    let rel = relative_min_eigenvalue(m);
    if rel <= SINGULARITY_THRESHOLD {
        return Err(FrrError::Singular {
            context: context.into(),
            condition: rel,
        });
    }
    let chol = nalgebra::Cholesky::new(m.clone()).ok_or_else(|| FrrError::Singular {
        context: context.into(),
        condition: rel,
    })?;
    let x = chol.solve(b);
    let residual = (m * &x - b).norm() / b_norm;
    if residual > SOLVE_RESIDUAL_TOL {
        return Err(FrrError::Singular {
            context: format!("{context}: residual {residual:.3e}"),
            condition: rel,
        });
    }
    Ok(x)
}
