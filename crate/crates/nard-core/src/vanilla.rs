//! Vanilla NARD: alternating posterior computation, V update, graphical
//! lasso and per-feature precision updates until max |delta(1/alpha)| falls
//! below the tolerance.

use nalgebra::DMatrix;

use crate::error::{NardError, Result};
use crate::glasso::{glasso_fit, GlassoConfig};
use crate::matrix::{cholesky_jitter, symmetrize};
use crate::mlf::neg_log_mlf;
use crate::types::{
    AlphaPrior, AlphaVector, ArdState, Dataset, FitConfig, HyperpriorConfig, TraceEntry, VPrior,
};

/// Posterior of W over the active set: column covariance `sigma` (p x p)
/// and mean `mu` (m x p).
#[derive(Debug, Clone)]
pub struct PosteriorPair {
    pub sigma: DMatrix<f64>,
    pub mu: DMatrix<f64>,
    /// Feature indices the columns of `mu` refer to.
    pub active: Vec<usize>,
}

/// sigma = (K_A + X_A X_A^T)^{-1}, mu = Y X_A^T sigma.
pub fn posterior_update(data: &Dataset, alpha: &AlphaVector) -> Result<PosteriorPair> {
    let active = alpha.active_indices();
    if active.is_empty() {
        return Err(NardError::EmptyModel);
    }
    let x_a = data.x.select_rows(active.iter());
    let k_a = alpha.active_values();
    let mut sxx = &x_a * x_a.transpose();
    for (i, k) in k_a.iter().enumerate() {
        sxx[(i, i)] += k;
    }
    let (chol, _) = cholesky_jitter(&symmetrize(&sxx))?;
    let sigma = symmetrize(&chol.inverse());
    let mu = &data.y * x_a.transpose() * &sigma;
    Ok(PosteriorPair { sigma, mu, active })
}

/// Flat-prior V update: [(Y - mu X)(Y - mu X)^T + mu K mu^T] / N.
/// Jitters the diagonal when the residual is rank-deficient; the second
/// return value reports the jitter applied (0.0 if none).
pub fn update_v_flat(
    data: &Dataset,
    post: &PosteriorPair,
    alpha: &AlphaVector,
) -> Result<(DMatrix<f64>, f64)> {
    let raw = v_numerator(data, post, alpha)? / data.num_samples() as f64;
    ensure_pd(raw)
}

/// Inverse-Wishart V update: [(Y - mu X)(Y - mu X)^T + mu K mu^T + Psi] / (N + nu).
pub fn update_v_inverse_wishart(
    data: &Dataset,
    post: &PosteriorPair,
    alpha: &AlphaVector,
    psi: &DMatrix<f64>,
    nu: f64,
) -> Result<(DMatrix<f64>, f64)> {
    if !(nu > 0.0) {
        return Err(NardError::InvalidParameter("nu must be > 0".into()));
    }
    let m = data.num_outputs();
    if psi.nrows() != m || psi.ncols() != m {
        return Err(NardError::Dimension(format!("psi must be {m} x {m}")));
    }
    let raw = (v_numerator(data, post, alpha)? + psi) / (data.num_samples() as f64 + nu);
    ensure_pd(raw)
}

fn v_numerator(
    data: &Dataset,
    post: &PosteriorPair,
    alpha: &AlphaVector,
) -> Result<DMatrix<f64>> {
    let x_a = data.x.select_rows(post.active.iter());
    let k_a = alpha.active_values();
    if k_a.len() != post.mu.ncols() {
        return Err(NardError::Dimension(format!(
            "posterior has {} columns but {} active alphas",
            post.mu.ncols(),
            k_a.len()
        )));
    }
    let resid = &data.y - &post.mu * &x_a;
    let mut num = &resid * resid.transpose();
    for (j, k) in k_a.iter().enumerate() {
        let col = post.mu.column(j);
        num += *k * &col * col.transpose();
    }
    Ok(symmetrize(&num))
}

fn ensure_pd(raw: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    match cholesky_jitter(&raw) {
        Ok((_, 0.0)) => Ok((raw, 0.0)),
        Ok((_, jitter)) => {
            let mut fixed = raw;
            for i in 0..fixed.nrows() {
                fixed[(i, i)] += jitter;
            }
            Ok((fixed, jitter))
        }
        Err(e) => Err(e),
    }
}

/// Flat-prior precision update: alpha_i = m / [m sigma_ii + (mu^T Omega mu)_ii],
/// entries above `prune_threshold` flagged pruned.
pub fn update_alpha_flat(
    post: &PosteriorPair,
    omega: &DMatrix<f64>,
    m_dim: usize,
    d: usize,
    prune_threshold: f64,
) -> Result<AlphaVector> {
    update_alpha_gamma(post, omega, m_dim, d, prune_threshold, 1.0, 0.0)
}

/// Gamma-prior precision update:
/// alpha_i = (m + 2a - 2) / [m sigma_ii + (mu^T Omega mu)_ii + 2b].
/// Reduces to the flat update at a = 1, b = 0.
pub fn update_alpha_gamma(
    post: &PosteriorPair,
    omega: &DMatrix<f64>,
    m_dim: usize,
    d: usize,
    prune_threshold: f64,
    a: f64,
    b: f64,
) -> Result<AlphaVector> {
    let numer = m_dim as f64 + 2.0 * a - 2.0;
    if numer <= 0.0 {
        return Err(NardError::InvalidParameter(format!(
            "Gamma numerator m + 2a - 2 = {numer} <= 0; need a > (2 - m)/2"
        )));
    }
    let mut alpha = AlphaVector::all_pruned(d);
    let mut_v = post.mu.transpose() * omega * &post.mu; // p x p
    for (j, &feat) in post.active.iter().enumerate() {
        let denom = m_dim as f64 * post.sigma[(j, j)] + mut_v[(j, j)] + 2.0 * b;
        if denom <= 0.0 {
            continue; // exact zero denominator: pruned
        }
        let val = numer / denom;
        if val <= prune_threshold {
            alpha.set(feat, val)?;
        }
    }
    Ok(alpha)
}

/// Max |1/alpha_new - 1/alpha_old| over all features; pruned entries
/// contribute 1/alpha = 0.
pub fn max_delta_inv_alpha(old: &AlphaVector, new: &AlphaVector) -> f64 {
    let ro = old.reciprocals();
    let rn = new.reciprocals();
    (ro - rn).amax()
}

/// Coefficients over all d features: posterior mean in active columns,
/// exact zeros elsewhere.
pub fn full_width_w(post: &PosteriorPair, d: usize) -> DMatrix<f64> {
    let m = post.mu.nrows();
    let mut w = DMatrix::zeros(m, d);
    for (j, &feat) in post.active.iter().enumerate() {
        w.set_column(feat, &post.mu.column(j));
    }
    w
}

pub(crate) fn initial_v(data: &Dataset) -> DMatrix<f64> {
    symmetrize(&(&data.y * data.y.transpose() / data.num_samples() as f64))
}

pub(crate) fn glasso_config_for(config: &FitConfig) -> GlassoConfig {
    GlassoConfig {
        lambda: config.lambda,
        ..Default::default()
    }
}

/// Vanilla NARD fit (flat or Gamma alpha prior, flat or inverse-Wishart V
/// prior).
pub fn nard_fit(
    data: &Dataset,
    config: &FitConfig,
    hyper: &HyperpriorConfig,
) -> Result<ArdState> {
    config.validate()?;
    hyper.validate(data.num_outputs())?;

    let d = data.num_features();
    let m = data.num_outputs();
    let mut alpha = AlphaVector::uniform(d, 1.0)?;
    let mut v = initial_v(data);
    let (_, init_jitter) = cholesky_jitter(&v)?;
    let mut warnings = Vec::new();
    if init_jitter > 0.0 {
        for i in 0..m {
            v[(i, i)] += init_jitter;
        }
        warnings.push(format!(
            "initial covariance was rank-deficient; jitter {init_jitter:.3e} applied"
        ));
    }
    let gl_cfg = glasso_config_for(config);
    let mut omega: Option<DMatrix<f64>> = None;
    let mut trace: Vec<TraceEntry> = Vec::new();
    let psi = hyper.psi_matrix();

    let mut post = posterior_update(data, &alpha)?;
    let mut iter = 0;
    loop {
        iter += 1;

        let (v_new, jitter) = match (&hyper.v_prior, &psi) {
            (VPrior::InverseWishart { nu, .. }, Some(psi_mat)) => {
                update_v_inverse_wishart(data, &post, &alpha, psi_mat, *nu)?
            }
            _ => update_v_flat(data, &post, &alpha)?,
        };
        if jitter > 0.0 {
            warnings.push(format!(
                "iteration {iter}: V update rank-deficient, jitter {jitter:.3e} applied"
            ));
        }

        let gl = glasso_fit(&v_new, &gl_cfg, omega.as_ref())?;
        if !gl.converged {
            warnings.push(format!(
                "iteration {iter}: glasso did not converge within {} sweeps",
                gl.iters
            ));
        }
        v = gl.v_hat;
        omega = Some(gl.omega_hat);
        let omega_ref = omega.as_ref().unwrap();

        let alpha_new = match &hyper.alpha_prior {
            AlphaPrior::Flat => {
                update_alpha_flat(&post, omega_ref, m, d, config.prune_threshold)?
            }
            AlphaPrior::Gamma { shape, rate } => update_alpha_gamma(
                &post,
                omega_ref,
                m,
                d,
                config.prune_threshold,
                *shape,
                *rate,
            )?,
        };

        let delta = max_delta_inv_alpha(&alpha, &alpha_new);
        alpha = alpha_new;

        let nlm = neg_log_mlf(data, &alpha, &v).unwrap_or(f64::NAN);
        trace.push(TraceEntry {
            iter,
            neg_log_mlf: nlm,
            max_delta_inv_alpha: delta,
            active_count: alpha.num_active(),
        });

        if alpha.num_active() == 0 {
            warnings.push("all features pruned; returning empty support".into());
            let omega_final = omega.unwrap();
            return Ok(ArdState {
                alpha,
                w: DMatrix::zeros(m, d),
                mu: DMatrix::zeros(m, 0),
                sigma: DMatrix::zeros(0, 0),
                v,
                omega: omega_final,
                iter,
                trace,
                warnings,
            });
        }

        post = posterior_update(data, &alpha)?;

        if delta <= config.epsilon || iter >= config.max_iter {
            break;
        }
    }

    let w = full_width_w(&post, d);
    Ok(ArdState {
        alpha,
        v,
        omega: omega.unwrap(),
        w,
        mu: post.mu,
        sigma: post.sigma,
        iter,
        trace,
        warnings,
    })
}
