//! Marginal-likelihood evaluation shared by all solvers.
//!
//! The objective is the proportional form of the negative log evidence,
//! `m ln|C| + N ln|V| + Tr(Y^T V^{-1} Y C^{-1})`, restricted to the active
//! (unpruned) features. The dropped 1/2 factor and additive constant mean
//! values are only comparable across runs with the same (m, N, d).

use nalgebra::DMatrix;

use crate::error::Result;
use crate::matrix::{self, cholesky_jitter, chol_log_det, max_abs, symmetrize};
use crate::types::{AlphaVector, Dataset};

/// Negative log marginal likelihood (proportional form) for the given
/// per-feature precisions and row covariance `v`.
///
/// With every feature pruned, C = I and the value reduces to
/// `N ln|V| + Tr(Y^T V^{-1} Y)`.
pub fn neg_log_mlf(data: &Dataset, alpha: &AlphaVector, v: &DMatrix<f64>) -> Result<f64> {
    let n = data.num_samples() as f64;
    let m = data.num_outputs() as f64;

    let v_factor = matrix::assert_pd(v)?;
    let ln_det_v = v_factor.log_det();

    let active = alpha.active_indices();
    if active.is_empty() {
        let yyt = &data.y * data.y.transpose();
        let tr = (v_factor.solve_mat(&yyt)).trace();
        return Ok(n * ln_det_v + tr);
    }

    let x_a = data.x.select_rows(active.iter());
    let k_a = alpha.active_values();

    // |C| = |S_xx| / |K| with S_xx = X_A X_A^T + K_A.
    let mut sxx = &x_a * x_a.transpose();
    for (i, k) in k_a.iter().enumerate() {
        sxx[(i, i)] += k;
    }
    let (sxx_chol, _) = cholesky_jitter(&sxx)?;
    let ln_det_c = chol_log_det(&sxx_chol) - k_a.iter().map(|k| k.ln()).sum::<f64>();

    // Y C^{-1} Y^T = Y Y^T - (Y X_A^T) S_xx^{-1} (Y X_A^T)^T.
    let yxt = &data.y * x_a.transpose();
    let solved = sxx_chol.solve(&yxt.transpose());
    let y_cinv_yt = symmetrize(&(&data.y * data.y.transpose() - yxt * solved));

    let tr = v_factor.solve_mat(&y_cinv_yt).trace();
    Ok(m * ln_det_c + n * ln_det_v + tr)
}

/// Max-abs residual of the identity
/// `Y C^{-1} Y^T = (Y - mu X)(Y - mu X)^T + mu K mu^T`
/// for the posterior mean `mu` (m x p, columns aligned with the active set).
/// Exact in exact arithmetic; used as a solver self-test.
pub fn mlf_variational_check(
    data: &Dataset,
    alpha: &AlphaVector,
    mu: &DMatrix<f64>,
) -> Result<f64> {
    let active = alpha.active_indices();
    let x_a = data.x.select_rows(active.iter());
    let k_a = alpha.active_values();

    let lhs = matrix::y_cinv_yt(&data.y, &x_a, &k_a)?;

    let resid = &data.y - mu * &x_a;
    let mut rhs = &resid * resid.transpose();
    // mu K mu^T with diagonal K.
    for (j, k) in k_a.iter().enumerate() {
        let col = mu.column(j);
        rhs += *k * &col * col.transpose();
    }

    Ok(max_abs(&(lhs - rhs)))
}
