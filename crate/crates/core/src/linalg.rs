//! Thin wrappers around the dense factorizations used by the solvers.

use nalgebra::{DMatrix, DVector};

/// Solve `A x = b` by LU with partial pivoting. `None` if A is singular.
pub(crate) fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let x = a.clone().lu().solve(b)?;
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Minimum-norm least-squares solution of `A x ~= b` via SVD.
///
/// Singular values below `1e-12 * sigma_max` are truncated, so the call is
/// well defined for rank-deficient systems.
pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let eps = if smax > 0.0 {
        smax * 1e-12
    } else {
        f64::EPSILON
    };
    svd.solve(b, eps)
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}
