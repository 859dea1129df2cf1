//! Graphical lasso: L1-penalized precision-matrix estimation, plus the
//! cross-validated penalty selector.
//!
//! The solver is proximal gradient descent on the primal objective
//! `-ln|Omega| + Tr(V Omega) + lambda * sum_{i != j} |omega_ij|` with
//! backtracking line search. Backtracking keeps every iterate PD and the
//! objective trace non-increasing, and the soft-threshold step produces
//! exact zeros in the off-diagonal pattern.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NardError, Result};
use crate::matrix::{assert_pd, max_abs, symmetrize};
use crate::types::Dataset;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GlassoConfig {
    pub lambda: f64,
    /// Convergence threshold on the max absolute change of Omega per sweep.
    pub tol: f64,
    pub max_iter: usize,
    /// Penalize the diagonal as well (default false: the penalty sums over
    /// i != j only).
    pub penalize_diagonal: bool,
}

impl Default for GlassoConfig {
    fn default() -> Self {
        GlassoConfig {
            lambda: 0.0,
            tol: 1e-5,
            max_iter: 200,
            penalize_diagonal: false,
        }
    }
}

impl GlassoConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        GlassoConfig {
            lambda,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlassoResult {
    /// Penalized covariance estimate, the inverse of `omega_hat`.
    pub v_hat: DMatrix<f64>,
    /// Penalized precision estimate (symmetric PD, exact zero pattern).
    pub omega_hat: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
}

/// `-ln|Omega| + Tr(V Omega) + lambda * sum_{i != j} |omega_ij|`.
pub fn glasso_objective(v_emp: &DMatrix<f64>, omega: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let f = assert_pd(omega)?;
    let mut pen = 0.0;
    for i in 0..omega.nrows() {
        for j in 0..omega.ncols() {
            if i != j {
                pen += omega[(i, j)].abs();
            }
        }
    }
    Ok(-f.log_det() + (v_emp * omega).trace() + lambda * pen)
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn penalty(omega: &DMatrix<f64>, lambda: f64, penalize_diagonal: bool) -> f64 {
    let mut pen = 0.0;
    for i in 0..omega.nrows() {
        for j in 0..omega.ncols() {
            if i != j || penalize_diagonal {
                pen += omega[(i, j)].abs();
            }
        }
    }
    lambda * pen
}

/// Smooth part of the objective and its gradient; `None` if omega is not PD.
fn smooth_value_grad(
    v_emp: &DMatrix<f64>,
    omega: &DMatrix<f64>,
) -> Option<(f64, DMatrix<f64>)> {
    let chol = nalgebra::Cholesky::new(omega.clone())?;
    let log_det = crate::matrix::chol_log_det(&chol);
    let inv = symmetrize(&chol.inverse());
    let value = -log_det + (v_emp * omega).trace();
    let grad = v_emp - inv;
    Some((value, grad))
}

fn smooth_value(v_emp: &DMatrix<f64>, omega: &DMatrix<f64>) -> Option<f64> {
    let chol = nalgebra::Cholesky::new(omega.clone())?;
    Some(-crate::matrix::chol_log_det(&chol) + (v_emp * omega).trace())
}

/// Solve the graphical lasso for the empirical covariance `v_emp`.
/// `warm` optionally initializes Omega (used across outer NARD iterations).
pub fn glasso_fit(
    v_emp: &DMatrix<f64>,
    config: &GlassoConfig,
    warm: Option<&DMatrix<f64>>,
) -> Result<GlassoResult> {
    if !(config.lambda >= 0.0) {
        return Err(NardError::InvalidParameter("lambda must be >= 0".into()));
    }
    let m = v_emp.nrows();
    if v_emp.ncols() != m {
        return Err(NardError::Dimension("v_emp must be square".into()));
    }
    for i in 0..m {
        if !(v_emp[(i, i)] > 0.0) {
            return Err(NardError::InvalidParameter(format!(
                "v_emp has non-positive diagonal entry at {i}"
            )));
        }
    }
    let v_emp = symmetrize(v_emp);

    let mut omega = match warm {
        Some(w) if nalgebra::Cholesky::new(w.clone()).is_some() => w.clone(),
        _ => DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 / v_emp[(i, i)] } else { 0.0 }),
    };

    let lam = config.lambda;
    let pd = config.penalize_diagonal;
    let mut step = 1.0 / max_abs(&v_emp).max(1.0);
    let mut trace = Vec::with_capacity(config.max_iter + 1);
    let (mut g_val, mut grad) = smooth_value_grad(&v_emp, &omega)
        .ok_or(NardError::NotPositiveDefinite { pivot: 1 })?;
    let mut obj = g_val + penalty(&omega, lam, pd);
    trace.push(obj);

    let mut converged = false;
    let mut iters = 0;
    'outer: for it in 0..config.max_iter {
        iters = it + 1;
        // Backtracking proximal step.
        let mut t = step;
        let mut accepted = None;
        for _ in 0..80 {
            let mut cand = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    let raw = omega[(i, j)] - t * grad[(i, j)];
                    cand[(i, j)] = if i != j || pd { soft(raw, t * lam) } else { raw };
                }
            }
            let cand = symmetrize(&cand);
            if let Some(g_cand) = smooth_value(&v_emp, &cand) {
                // Majorizer decrease condition for the smooth part.
                let diff = &cand - &omega;
                let quad = g_val
                    + grad.iter().zip(diff.iter()).map(|(a, b)| a * b).sum::<f64>()
                    + diff.norm_squared() / (2.0 * t);
                let obj_cand = g_cand + penalty(&cand, lam, pd);
                if g_cand <= quad + 1e-12 * g_val.abs().max(1.0) && obj_cand <= obj + 1e-12 {
                    accepted = Some((cand, g_cand, obj_cand));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, g_cand, obj_cand)) = accepted else {
            // Step size underflow: current iterate is as good as it gets.
            converged = max_abs(&grad) <= config.tol;
            break 'outer;
        };
        let delta = max_abs(&(&cand - &omega));
        omega = cand;
        let _ = g_cand;
        obj = obj_cand;
        trace.push(obj);
        // Allow the step to grow back after conservative backtracking.
        step = (t * 2.0).min(1e6);
        let (gv, gr) = smooth_value_grad(&v_emp, &omega)
            .ok_or(NardError::NotPositiveDefinite { pivot: 1 })?;
        g_val = gv;
        grad = gr;
        if delta <= config.tol {
            converged = true;
            break;
        }
    }

    let omega_hat = symmetrize(&omega);
    let f = assert_pd(&omega_hat)?;
    let v_hat = f.inverse();
    Ok(GlassoResult {
        v_hat,
        omega_hat,
        objective_trace: trace,
        iters,
        converged,
    })
}

/// Pick the penalty from `grid` by K-fold cross-validation: for each lambda,
/// fit on the concatenated training folds and score the held-out fold with
/// `Tr(V_l Omega) - ln|Omega| + lambda * sum_{i != j} |omega_ij|`; the
/// summed score is minimized, ties broken toward the larger lambda.
///
/// `cov_builder` maps a dataset split to its empirical covariance.
pub fn select_lambda<F>(
    folds: &[Dataset],
    grid: &[f64],
    config: &GlassoConfig,
    cov_builder: F,
) -> Result<f64>
where
    F: Fn(&Dataset) -> Result<DMatrix<f64>> + Sync,
{
    if grid.is_empty() {
        return Err(NardError::InvalidParameter("lambda grid is empty".into()));
    }
    if folds.len() < 2 {
        return Err(NardError::InvalidParameter(
            "cross-validation requires at least 2 folds".into(),
        ));
    }

    // Precompute per-fold training/validation covariances.
    let mut train_covs = Vec::with_capacity(folds.len());
    let mut valid_covs = Vec::with_capacity(folds.len());
    for (l, fold) in folds.iter().enumerate() {
        let train = concat_excluding(folds, l)?;
        let cov_t = cov_builder(&train).map_err(|_| NardError::FoldTooSmall { fold: l })?;
        let cov_v = cov_builder(fold).map_err(|_| NardError::FoldTooSmall { fold: l })?;
        for c in [&cov_t, &cov_v] {
            for i in 0..c.nrows() {
                if !(c[(i, i)] > 0.0) || !c[(i, i)].is_finite() {
                    return Err(NardError::FoldTooSmall { fold: l });
                }
            }
        }
        train_covs.push(cov_t);
        valid_covs.push(cov_v);
    }

    let scores: Vec<Result<f64>> = grid
        .par_iter()
        .map(|&lambda| {
            let mut total = 0.0;
            for (cov_t, cov_v) in train_covs.iter().zip(valid_covs.iter()) {
                let cfg = GlassoConfig {
                    lambda,
                    ..config.clone()
                };
                let fit = glasso_fit(cov_t, &cfg, None)?;
                total += glasso_objective(cov_v, &fit.omega_hat, lambda)?;
            }
            Ok(total)
        })
        .collect();

    let mut best: Option<(f64, f64)> = None; // (lambda, score)
    for (lambda, score) in grid.iter().zip(scores) {
        let score = score?;
        best = match best {
            None => Some((*lambda, score)),
            Some((bl, bs)) => {
                // Strict improvement, or equal score at larger lambda (sparser).
                if score < bs || (score == bs && *lambda > bl) {
                    Some((*lambda, score))
                } else {
                    Some((bl, bs))
                }
            }
        };
    }
    Ok(best.unwrap().0)
}

fn concat_excluding(folds: &[Dataset], exclude: usize) -> Result<Dataset> {
    let parts: Vec<&Dataset> = folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != exclude)
        .map(|(_, f)| f)
        .collect();
    let d = parts[0].num_features();
    let m = parts[0].num_outputs();
    let n_total: usize = parts.iter().map(|p| p.num_samples()).sum();
    let mut x = DMatrix::zeros(d, n_total);
    let mut y = DMatrix::zeros(m, n_total);
    let mut col = 0;
    for p in parts {
        let n = p.num_samples();
        x.view_mut((0, col), (d, n)).copy_from(&p.x);
        y.view_mut((0, col), (m, n)).copy_from(&p.y);
        col += n;
    }
    Dataset::new(x, y)
}

/// Split sample columns into K contiguous folds.
pub fn make_folds(data: &Dataset, k: usize) -> Result<Vec<Dataset>> {
    let n = data.num_samples();
    if k < 2 || k > n {
        return Err(NardError::InvalidParameter(format!(
            "cannot make {k} folds from {n} samples"
        )));
    }
    let mut folds = Vec::with_capacity(k);
    let base = n / k;
    let rem = n % k;
    let mut start = 0;
    for l in 0..k {
        let len = base + usize::from(l < rem);
        let cols: Vec<usize> = (start..start + len).collect();
        folds.push(data.select_samples(&cols));
        start += len;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn objective_identity_cases() {
        let m = 3;
        let eye = DMatrix::identity(m, m);
        assert_relative_eq!(glasso_objective(&eye, &eye, 0.0).unwrap(), m as f64);

        let v = DMatrix::from_row_slice(1, 1, &[2.0]);
        let o = DMatrix::from_row_slice(1, 1, &[0.5]);
        assert_relative_eq!(
            glasso_objective(&v, &o, 0.5).unwrap(),
            2.0f64.ln() + 1.0,
            epsilon = 1e-12
        );

        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let o = DMatrix::identity(2, 2);
        assert_relative_eq!(glasso_objective(&v, &o, 1.0).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn objective_rejects_non_pd() {
        let v = DMatrix::identity(2, 2);
        let o = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(glasso_objective(&v, &o, 0.1).is_err());
    }

    #[test]
    fn unpenalized_fit_recovers_inverse() {
        let v = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 1.0]);
        let cfg = GlassoConfig {
            lambda: 0.0,
            tol: 1e-9,
            max_iter: 5000,
            penalize_diagonal: false,
        };
        let res = glasso_fit(&v, &cfg, None).unwrap();
        let vinv = assert_pd(&v).unwrap().inverse();
        assert!(max_abs(&(&res.omega_hat - vinv)) < 1e-6);
        assert!(max_abs(&(&res.v_hat * &res.omega_hat - DMatrix::identity(3, 3))) < 1e-6);
    }

    #[test]
    fn large_lambda_gives_exact_diagonal() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
        let cfg = GlassoConfig::with_lambda(0.7);
        let res = glasso_fit(&v, &cfg, None).unwrap();
        assert_eq!(res.omega_hat[(0, 1)], 0.0);
        assert_eq!(res.omega_hat[(1, 0)], 0.0);
        assert_relative_eq!(res.omega_hat[(0, 0)], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn two_by_two_soft_threshold_closed_form() {
        // lambda=0.2 on cov [[1,.6],[.6,1]]: effective covariance is
        // [[1,.4],[.4,1]] and omega its inverse.
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
        let cfg = GlassoConfig {
            lambda: 0.2,
            tol: 1e-10,
            max_iter: 20000,
            penalize_diagonal: false,
        };
        let res = glasso_fit(&v, &cfg, None).unwrap();
        let eff = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let expect = assert_pd(&eff).unwrap().inverse();
        assert!(max_abs(&(&res.omega_hat - expect)) < 1e-6);
    }

    #[test]
    fn objective_trace_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let v = &a * a.transpose() + DMatrix::identity(4, 4);
        let res = glasso_fit(&v, &GlassoConfig::with_lambda(0.15), None).unwrap();
        for w in res.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "trace increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn symmetry_exact() {
        let v = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.2, 0.4, 1.0, 0.3, 0.2, 0.3, 1.0]);
        let res = glasso_fit(&v, &GlassoConfig::with_lambda(0.1), None).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(res.omega_hat[(i, j)], res.omega_hat[(j, i)]);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_diagonal() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(glasso_fit(&v, &GlassoConfig::default(), None).is_err());
    }

    #[test]
    fn warm_start_accepted() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let first = glasso_fit(&v, &GlassoConfig::with_lambda(0.1), None).unwrap();
        let second = glasso_fit(&v, &GlassoConfig::with_lambda(0.1), Some(&first.omega_hat))
            .unwrap();
        assert!(second.iters <= first.iters);
    }

    #[test]
    fn select_lambda_singleton_grid() {
        let data = diag_dataset(42);
        let folds = make_folds(&data, 3).unwrap();
        let lam = select_lambda(&folds, &[0.25], &GlassoConfig::default(), |d| {
            Ok(crate::matrix::symmetrize(&(&d.y * d.y.transpose() / d.num_samples() as f64)))
        })
        .unwrap();
        assert_eq!(lam, 0.25);
    }

    #[test]
    fn select_lambda_duplicate_grid_values() {
        let data = diag_dataset(43);
        let folds = make_folds(&data, 2).unwrap();
        let lam = select_lambda(&folds, &[0.1, 0.1], &GlassoConfig::default(), |d| {
            Ok(crate::matrix::symmetrize(&(&d.y * d.y.transpose() / d.num_samples() as f64)))
        })
        .unwrap();
        assert_eq!(lam, 0.1);
    }

    #[test]
    fn select_lambda_avoids_smallest_on_sparse_truth() {
        // Data from a diagonal precision: CV must not pick the smallest
        // grid point on a log grid.
        let data = diag_dataset(7);
        let folds = make_folds(&data, 5).unwrap();
        let grid: Vec<f64> = (0..10)
            .map(|i| 10f64.powf(-3.0 + 3.0 * i as f64 / 9.0))
            .collect();
        let lam = select_lambda(&folds, &grid, &GlassoConfig::default(), |d| {
            Ok(crate::matrix::symmetrize(&(&d.y * d.y.transpose() / d.num_samples() as f64)))
        })
        .unwrap();
        assert!(lam > grid[0], "selected the smallest grid point {lam}");
    }

    fn diag_dataset(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 4;
        let n = 120;
        let y = DMatrix::from_fn(m, n, |_, _| {
            let u: f64 = rng.sample(rand_distr::StandardNormal);
            u
        });
        let x = DMatrix::from_fn(1, n, |_, _| rng.gen_range(-1.0..1.0));
        let _ = DVector::<f64>::zeros(1);
        Dataset::new(x, y).unwrap()
    }
}
