//! Sequential NARD: greedy add/re-estimate/delete of single features driven
//! by the per-feature sparsity/quality statistics and the closed-form
//! precision maximizer, accepting a step only when the log marginal
//! likelihood increases.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{NardError, Result};
use crate::glasso::glasso_fit;
use crate::matrix::{cholesky_jitter, symmetrize};
use crate::mlf::neg_log_mlf;
use crate::types::{AlphaVector, ArdState, Dataset, FitConfig, HyperpriorConfig, TraceEntry};
use crate::vanilla::{full_width_w, glasso_config_for, initial_v, posterior_update};

/// Mutable solver state; `q_cache` and `s_cache` hold the active-set
/// statistics Q_i, S_i for every feature.
#[derive(Debug, Clone)]
pub struct SequentialState {
    pub active: Vec<usize>,
    pub alpha: AlphaVector,
    /// Q_i = Y C_A^{-1} phi_i, one column per feature (m x d).
    pub q_cache: DMatrix<f64>,
    /// S_i = phi_i^T C_A^{-1} phi_i, length d.
    pub s_cache: DVector<f64>,
    pub v: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    /// Current log-MLF value (the negation of `neg_log_mlf`); accepted
    /// steps must increase it.
    pub mlf: f64,
    /// (X_A X_A^T + K_A)^{-1} over the active set (p x p).
    pub sxx_inv_active: DMatrix<f64>,
}

/// A contemplated single-feature move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Add { alpha_new: f64 },
    Reestimate { alpha_old: f64, alpha_new: f64 },
    Delete { alpha_old: f64 },
}

/// Q_i and S_i for feature `i` against the current active set, via the
/// Woodbury route (cost O(p^2 N); no N x N matrix is formed).
pub fn compute_qs(data: &Dataset, state: &SequentialState, i: usize) -> (DVector<f64>, f64) {
    let phi = data.x.row(i).transpose(); // N
    if state.active.is_empty() {
        return (&data.y * &phi, phi.norm_squared());
    }
    let x_a = data.x.select_rows(state.active.iter());
    let xphi = &x_a * &phi; // p
    let solved = &state.sxx_inv_active * &xphi; // p
    let q = &data.y * &phi - (&data.y * x_a.transpose()) * &solved;
    let s = phi.norm_squared() - xphi.dot(&solved);
    (q, s.max(0.0))
}

/// Convert the active-set statistics (Q_i, S_i) into the leave-one-out
/// statistics (q_i, s_i). For a feature outside the model (alpha pruned)
/// the two coincide.
pub fn qs_to_small(
    q_big: &DVector<f64>,
    s_big: f64,
    alpha_i: Option<f64>,
    feature: usize,
) -> Result<(DVector<f64>, f64)> {
    match alpha_i {
        None => Ok((q_big.clone(), s_big)),
        Some(a) => {
            let denom = a - s_big;
            if denom.abs() < 1e-12 {
                return Err(NardError::DegenerateDenominator { feature });
            }
            Ok((q_big * (a / denom), a * s_big / denom))
        }
    }
}

/// Closed-form maximizer of the single-feature likelihood contribution:
/// `Some(m s^2 / eta)` when eta = q^T Omega q - m s > 0, `None` (prune)
/// otherwise.
pub fn optimal_alpha(
    q: &DVector<f64>,
    s: f64,
    omega: &DMatrix<f64>,
    m_dim: usize,
) -> Result<Option<f64>> {
    if !(s > 0.0) {
        return Err(NardError::NumericDegeneracy(format!(
            "optimal_alpha requires s > 0, got {s}"
        )));
    }
    let eta = (q.transpose() * omega * q)[(0, 0)] - m_dim as f64 * s;
    if eta > 0.0 {
        Ok(Some(m_dim as f64 * s * s / eta))
    } else {
        Ok(None)
    }
}

/// The alpha_i-dependent part of the log-MLF:
/// `m [ln a - ln(a + s)] + q^T Omega q / (a + s)`; zero in the pruned limit.
fn alpha_part(alpha: f64, q_quad: f64, s: f64, m_dim: f64) -> f64 {
    m_dim * (alpha.ln() - (alpha + s).ln()) + q_quad / (alpha + s)
}

/// Log-MLF change predicted by the single-feature decomposition for the
/// given action; positive means improvement. (q_i, s_i) must be the
/// leave-one-out statistics for feature `i` in the current configuration.
pub fn delta_mlf(
    state: &SequentialState,
    data: &Dataset,
    i: usize,
    action: Action,
) -> Result<f64> {
    let (q_big, s_big) = cached_qs(state, data, i);
    let alpha_cur = match state.alpha.get(i) {
        crate::types::Alpha::Finite(a) => Some(a),
        crate::types::Alpha::Pruned => None,
    };
    let (q, s) = qs_to_small(&q_big, s_big, alpha_cur, i)?;
    let q_quad = (q.transpose() * &state.omega * &q)[(0, 0)];
    let m_dim = data.num_outputs() as f64;
    Ok(match action {
        Action::Add { alpha_new } => alpha_part(alpha_new, q_quad, s, m_dim),
        Action::Reestimate {
            alpha_old,
            alpha_new,
        } => alpha_part(alpha_new, q_quad, s, m_dim) - alpha_part(alpha_old, q_quad, s, m_dim),
        Action::Delete { alpha_old } => -alpha_part(alpha_old, q_quad, s, m_dim),
    })
}

fn cached_qs(state: &SequentialState, data: &Dataset, i: usize) -> (DVector<f64>, f64) {
    let _ = data;
    (state.q_cache.column(i).into_owned(), state.s_cache[i])
}

/// Rebuild (X_A X_A^T + K_A)^{-1} and the Q/S caches from scratch for the
/// current active set.
pub fn refresh_state(data: &Dataset, state: &mut SequentialState) -> Result<()> {
    let d = data.num_features();
    if state.active.is_empty() {
        state.sxx_inv_active = DMatrix::zeros(0, 0);
        state.q_cache = &data.y * data.x.transpose();
        for i in 0..d {
            state.s_cache[i] = data.x.row(i).norm_squared();
        }
        return Ok(());
    }
    let x_a = data.x.select_rows(state.active.iter());
    let k_a: Vec<f64> = state
        .active
        .iter()
        .map(|&i| match state.alpha.get(i) {
            crate::types::Alpha::Finite(a) => a,
            crate::types::Alpha::Pruned => unreachable!("active feature with pruned alpha"),
        })
        .collect();
    let mut sxx = &x_a * x_a.transpose();
    for (i, k) in k_a.iter().enumerate() {
        sxx[(i, i)] += k;
    }
    let (chol, _) = cholesky_jitter(&symmetrize(&sxx))?;
    state.sxx_inv_active = symmetrize(&chol.inverse());

    // Q = Y X^T - (Y X_A^T) S^{-1} (X_A X^T); S_i likewise, all features at once.
    let xa_xt = &x_a * data.x.transpose(); // p x d
    let proj = &state.sxx_inv_active * &xa_xt; // p x d
    let yxt = &data.y * data.x.transpose(); // m x d
    let yxat = &data.y * x_a.transpose(); // m x p
    state.q_cache = yxt - yxat * &proj;
    for i in 0..d {
        let s = data.x.row(i).norm_squared() - xa_xt.column(i).dot(&proj.column(i));
        state.s_cache[i] = s.max(0.0);
    }
    Ok(())
}

pub(crate) fn mle_covariance(data: &Dataset, state: &SequentialState) -> Result<DMatrix<f64>> {
    let x_a = data.x.select_rows(state.active.iter());
    let k_a: Vec<f64> = state
        .active
        .iter()
        .map(|&i| match state.alpha.get(i) {
            crate::types::Alpha::Finite(a) => a,
            crate::types::Alpha::Pruned => unreachable!(),
        })
        .collect();
    let mut v = crate::matrix::y_cinv_yt(&data.y, &x_a, &k_a)? / data.num_samples() as f64;
    if let Ok((_, j)) = cholesky_jitter(&v) {
        if j > 0.0 {
            for i in 0..v.nrows() {
                v[(i, i)] += j;
            }
        }
    }
    Ok(v)
}

/// Seed feature: the row of X best aligned with Y, argmax ||Y phi||^2 / ||phi||^2.
fn seed_feature(data: &Dataset) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..data.num_features() {
        let phi = data.x.row(i).transpose();
        let denom = phi.norm_squared();
        if denom == 0.0 {
            continue;
        }
        let score = (&data.y * &phi).norm_squared() / denom;
        if best.map_or(true, |(_, b)| score > b) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| NardError::NumericDegeneracy("all feature rows are zero".into()))
}

/// Sequential NARD fit. One `max_iter` unit is a full pass over all d
/// candidate features; the run stops when the best log-MLF gain available
/// in a pass is at most epsilon.
pub fn sequential_fit(
    data: &Dataset,
    config: &FitConfig,
    hyper: &HyperpriorConfig,
) -> Result<ArdState> {
    config.validate()?;
    hyper.validate(data.num_outputs())?;

    let d = data.num_features();
    let m = data.num_outputs();
    let gl_cfg = glasso_config_for(config);
    // Per-step glasso only steers the screening decisions; a relaxed
    // tolerance keeps the proximal solver from dominating the run. Omega is
    // polished at full accuracy once, after the last pass.
    let gl_relaxed = crate::glasso::GlassoConfig {
        tol: gl_cfg.tol.max(1e-4),
        max_iter: gl_cfg.max_iter.min(60),
        ..gl_cfg
    };
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ SELECTION_STREAM);
    let mut warnings = Vec::new();
    let mut trace = Vec::new();

    // Initial V from the empty-model MLE, then glasso.
    let v0 = initial_v(data);
    let gl0 = glasso_fit(&v0, &gl_cfg, None)?;

    let mut state = SequentialState {
        active: Vec::new(),
        alpha: AlphaVector::all_pruned(d),
        q_cache: DMatrix::zeros(m, d),
        s_cache: DVector::zeros(d),
        v: gl0.v_hat,
        omega: gl0.omega_hat,
        mlf: 0.0,
        sxx_inv_active: DMatrix::zeros(0, 0),
    };
    refresh_state(data, &mut state)?;

    // Seed the model with the best-aligned feature.
    let seed = seed_feature(data)?;
    let (q0, s0) = compute_qs(data, &state, seed);
    let alpha_seed = match optimal_alpha(&q0, s0, &state.omega, m)? {
        Some(a) if a <= config.prune_threshold => a,
        _ => 1.0,
    };
    state.active.push(seed);
    state.alpha.set(seed, alpha_seed)?;
    refresh_state(data, &mut state)?;
    let v_mle = mle_covariance(data, &state)?;
    let gl = glasso_fit(&v_mle, &gl_cfg, Some(&state.omega))?;
    state.v = gl.v_hat;
    state.omega = gl.omega_hat;
    state.mlf = -neg_log_mlf(data, &state.alpha, &state.v)?;

    let mut step_count = 0usize;
    for _pass in 0..config.max_iter {
        let mut order: Vec<usize> = (0..d).collect();
        if !config.round_robin {
            order.shuffle(&mut rng);
        }
        let mut best_gain = f64::NEG_INFINITY;

        for &i in &order {
            let in_model = state.alpha.is_active(i);
            let (q_big, s_big) = cached_qs(&state, data, i);
            let alpha_cur = match state.alpha.get(i) {
                crate::types::Alpha::Finite(a) => Some(a),
                crate::types::Alpha::Pruned => None,
            };
            let (q, s) = match qs_to_small(&q_big, s_big, alpha_cur, i) {
                Ok(v) => v,
                Err(_) => continue, // degenerate denominator: skip this pass
            };
            if !(s > 0.0) {
                continue;
            }
            let alpha_star = optimal_alpha(&q, s, &state.omega, m)?;
            let capped = alpha_star.filter(|a| *a <= config.prune_threshold);

            let action = match (in_model, capped) {
                (true, Some(a_new)) => Action::Reestimate {
                    alpha_old: alpha_cur.unwrap(),
                    alpha_new: a_new,
                },
                (true, None) => {
                    if state.active.len() == 1 {
                        continue; // never empty the model
                    }
                    Action::Delete {
                        alpha_old: alpha_cur.unwrap(),
                    }
                }
                (false, Some(a_new)) => Action::Add { alpha_new: a_new },
                (false, None) => continue,
            };

            // Cheap pre-screen from the decomposition; glasso runs only when
            // the alpha-level gain is positive.
            let dec_gain = delta_mlf(&state, data, i, action)?;
            best_gain = best_gain.max(dec_gain);
            if dec_gain <= 0.0 {
                continue;
            }

            let snapshot = state.clone();
            apply_action(&mut state, i, action);
            if let Err(e) = refresh_state(data, &mut state) {
                warnings.push(format!("feature {i}: refresh failed ({e}); rolled back"));
                state = snapshot;
                continue;
            }
            let v_mle = match mle_covariance(data, &state) {
                Ok(v) => v,
                Err(e) => {
                    warnings.push(format!("feature {i}: V update failed ({e}); rolled back"));
                    state = snapshot;
                    continue;
                }
            };
            let gl = glasso_fit(&v_mle, &gl_relaxed, Some(&snapshot.omega))?;
            if !gl.converged {
                warnings.push(format!("feature {i}: glasso did not converge"));
            }
            let mlf_new = -neg_log_mlf(data, &state.alpha, &gl.v_hat)?;
            let full_gain = mlf_new - snapshot.mlf;
            if full_gain > 0.0 {
                state.v = gl.v_hat;
                state.omega = gl.omega_hat;
                state.mlf = mlf_new;
                step_count += 1;
                best_gain = best_gain.max(full_gain);
                trace.push(TraceEntry {
                    iter: step_count,
                    neg_log_mlf: -state.mlf,
                    max_delta_inv_alpha: full_gain,
                    active_count: state.active.len(),
                });
            } else {
                state = snapshot;
            }
        }

        if best_gain <= config.epsilon {
            break;
        }
    }

    // Polish Omega at full accuracy from the empirical covariance at the
    // final active set (state.v is the relaxed glasso's regularized V-hat;
    // re-penalizing it would shrink twice).
    let v_emp = mle_covariance(data, &state)?;
    let gl_final = glasso_fit(&v_emp, &gl_cfg, Some(&state.omega))?;
    state.v = gl_final.v_hat;
    state.omega = gl_final.omega_hat;

    // W is computed once, from the final active set.
    let post = posterior_update(data, &state.alpha)?;
    let w = full_width_w(&post, d);
    Ok(ArdState {
        alpha: state.alpha,
        v: state.v,
        omega: state.omega,
        w,
        mu: post.mu,
        sigma: post.sigma,
        iter: step_count,
        trace,
        warnings,
    })
}

fn apply_action(state: &mut SequentialState, i: usize, action: Action) {
    match action {
        Action::Add { alpha_new } => {
            state.alpha.set(i, alpha_new).expect("alpha_new > 0");
            state.active.push(i);
            state.active.sort_unstable();
        }
        Action::Reestimate { alpha_new, .. } => {
            state.alpha.set(i, alpha_new).expect("alpha_new > 0");
        }
        Action::Delete { .. } => {
            state.alpha.prune(i);
            state.active.retain(|&j| j != i);
        }
    }
}

/// Domain-separation tag for the candidate-order RNG stream, so the same
/// --seed drives independent streams across subsystems.
const SELECTION_STREAM: u64 = 0x5e9_0badc0de;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{assert_pd, woodbury_c_inverse};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(rng: &mut impl Rng, d: usize, m: usize, n: usize) -> Dataset {
        let x = DMatrix::from_fn(d, n, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        Dataset::new(x, y).unwrap()
    }

    fn state_for(data: &Dataset, active: &[usize], alpha_val: f64) -> SequentialState {
        let d = data.num_features();
        let m = data.num_outputs();
        let mut alpha = AlphaVector::all_pruned(d);
        for &i in active {
            alpha.set(i, alpha_val).unwrap();
        }
        let mut state = SequentialState {
            active: active.to_vec(),
            alpha,
            q_cache: DMatrix::zeros(m, d),
            s_cache: DVector::zeros(d),
            v: DMatrix::identity(m, m),
            omega: DMatrix::identity(m, m),
            mlf: 0.0,
            sxx_inv_active: DMatrix::zeros(0, 0),
        };
        refresh_state(data, &mut state).unwrap();
        state
    }

    #[test]
    fn compute_qs_empty_active_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data = random_dataset(&mut rng, 3, 2, 5);
        let state = state_for(&data, &[], 1.0);
        let (q, s) = compute_qs(&data, &state, 1);
        let phi = data.x.row(1).transpose();
        assert!((q - &data.y * &phi).amax() < 1e-12);
        assert_relative_eq!(s, phi.norm_squared(), epsilon = 1e-12);
    }

    #[test]
    fn compute_qs_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let data = random_dataset(&mut rng, 4, 3, 6);
        let state = state_for(&data, &[0, 2], 1.5);
        let x_a = data.x.select_rows([0usize, 2].iter());
        let c_inv = woodbury_c_inverse(&x_a, &[1.5, 1.5]).unwrap();
        for i in 0..4 {
            let phi = data.x.row(i).transpose();
            let q_oracle = &data.y * &c_inv * &phi;
            let s_oracle = (phi.transpose() * &c_inv * &phi)[(0, 0)];
            let (q, s) = compute_qs(&data, &state, i);
            assert!((q - q_oracle).amax() < 1e-10);
            assert_relative_eq!(s, s_oracle, epsilon = 1e-10);
        }
    }

    #[test]
    fn qs_small_projection_residual_vanishes() {
        // phi_i in the row space of X_A with tiny K: S_i -> 0.
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let base = DMatrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut x = DMatrix::zeros(3, n);
        x.view_mut((0, 0), (2, n)).copy_from(&base);
        // row 2 = row0 + row1
        for j in 0..n {
            x[(2, j)] = base[(0, j)] + base[(1, j)];
        }
        let y = DMatrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0));
        let data = Dataset::new(x, y).unwrap();
        let state = state_for(&data, &[0, 1], 1e-8);
        let (_, s) = compute_qs(&data, &state, 2);
        assert!(s < 1e-4, "S_i = {s}");
    }

    #[test]
    fn qs_to_small_cases() {
        let q = DVector::from_vec(vec![2.0, 0.0]);
        // pruned: identity
        let (qs, ss) = qs_to_small(&q, 1.0, None, 0).unwrap();
        assert_eq!(qs, q);
        assert_eq!(ss, 1.0);
        // alpha=2, S=1: s = 2, q = (4, 0)
        let (qs, ss) = qs_to_small(&q, 1.0, Some(2.0), 0).unwrap();
        assert_relative_eq!(ss, 2.0);
        assert_relative_eq!(qs[0], 4.0);
        // degenerate
        assert!(qs_to_small(&q, 2.0, Some(2.0), 0).is_err());
    }

    #[test]
    fn qs_roundtrip_recovers_big_s() {
        // S = alpha s / (alpha + s)
        let alpha = 3.0;
        let s_big = 1.2;
        let q = DVector::from_vec(vec![1.0]);
        let (_, s) = qs_to_small(&q, s_big, Some(alpha), 0).unwrap();
        let back = alpha * s / (alpha + s);
        assert_relative_eq!(back, s_big, epsilon = 1e-12);
    }

    #[test]
    fn optimal_alpha_cases() {
        let omega = DMatrix::identity(1, 1);
        // q = 0 -> eta < 0 -> pruned
        let pruned = optimal_alpha(&DVector::zeros(1), 1.0, &omega, 1).unwrap();
        assert!(pruned.is_none());
        // m=1, s=1, q=2: eta = 3, alpha = 1/3
        let a = optimal_alpha(&DVector::from_vec(vec![2.0]), 1.0, &omega, 1)
            .unwrap()
            .unwrap();
        assert_relative_eq!(a, 1.0 / 3.0, epsilon = 1e-12);
        // s <= 0 errors
        assert!(optimal_alpha(&DVector::zeros(1), 0.0, &omega, 1).is_err());
    }

    #[test]
    fn optimal_alpha_beats_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..50 {
            let m = rng.gen_range(1..=4);
            let q = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
            let s: f64 = rng.gen_range(0.05..3.0);
            let a = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-0.5..0.5));
            let omega = &a * a.transpose() + DMatrix::identity(m, m);
            let q_quad = (q.transpose() * &omega * &q)[(0, 0)];
            let md = m as f64;
            let eta = q_quad - md * s;
            let ell = |alpha: f64| md * (alpha.ln() - (alpha + s).ln()) + q_quad / (alpha + s);
            match optimal_alpha(&q, s, &omega, m).unwrap() {
                Some(alpha_star) => {
                    assert!(eta > 0.0);
                    let best = ell(alpha_star);
                    for k in 0..=1000 {
                        let g = 10f64.powf(-6.0 + 15.0 * k as f64 / 1000.0);
                        assert!(best >= ell(g) - 1e-9, "grid beat closed form at {g}");
                    }
                }
                None => {
                    assert!(eta <= 0.0);
                    // monotone increasing: right boundary is the grid max
                    assert!(ell(1e9) >= ell(1e-6));
                }
            }
        }
    }

    #[test]
    fn delta_mlf_delete_then_add_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let data = random_dataset(&mut rng, 4, 2, 6);
        let state = state_for(&data, &[0, 1, 2], 1.5);
        let del = delta_mlf(
            &state,
            &data,
            1,
            Action::Delete { alpha_old: 1.5 },
        )
        .unwrap();
        // After deleting, adding back with the same alpha: q,s of the
        // deleted configuration equal the leave-one-out stats, so the
        // decomposition deltas cancel exactly.
        let mut state2 = state.clone();
        apply_action(&mut state2, 1, Action::Delete { alpha_old: 1.5 });
        refresh_state(&data, &mut state2).unwrap();
        let add = delta_mlf(&state2, &data, 1, Action::Add { alpha_new: 1.5 }).unwrap();
        assert_relative_eq!(del + add, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn delta_mlf_optimal_alpha_dominates_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let data = random_dataset(&mut rng, 5, 2, 8);
        let state = state_for(&data, &[0, 3], 2.0);
        let i = 1;
        let (q_big, s_big) = compute_qs(&data, &state, i);
        let (q, s) = qs_to_small(&q_big, s_big, None, i).unwrap();
        if let Some(a_star) = optimal_alpha(&q, s, &state.omega, 2).unwrap() {
            let best = delta_mlf(&state, &data, i, Action::Add { alpha_new: a_star }).unwrap();
            for k in 0..100 {
                let a = 10f64.powf(-3.0 + 6.0 * k as f64 / 99.0);
                let g = delta_mlf(&state, &data, i, Action::Add { alpha_new: a }).unwrap();
                assert!(best >= g - 1e-9);
            }
        }
    }

    #[test]
    fn delta_mlf_matches_full_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let data = random_dataset(&mut rng, 5, 2, 7);
        let mut state = state_for(&data, &[0, 2, 4], 1.8);
        // Fix V = I so the decomposition delta equals the full MLF delta.
        state.v = DMatrix::identity(2, 2);
        state.omega = DMatrix::identity(2, 2);
        let l_before = -neg_log_mlf(&data, &state.alpha, &state.v).unwrap();

        let action = Action::Delete { alpha_old: 1.8 };
        let dec = delta_mlf(&state, &data, 2, action).unwrap();

        let mut after = state.clone();
        apply_action(&mut after, 2, action);
        let l_after = -neg_log_mlf(&data, &after.alpha, &state.v).unwrap();
        assert_relative_eq!(dec, l_after - l_before, epsilon = 1e-8);
    }

    #[test]
    fn cache_coherence_after_refresh() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let data = random_dataset(&mut rng, 6, 2, 9);
        let state = state_for(&data, &[1, 3, 5], 1.1);
        for i in 0..6 {
            let (q, s) = compute_qs(&data, &state, i);
            assert!((q - state.q_cache.column(i)).amax() < 1e-8);
            assert!((s - state.s_cache[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn fit_recovers_single_relevant_feature() {
        let mut hits = 0;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let n = 60;
            let d = 10;
            let x = DMatrix::from_fn(d, n, |_, _| {
                let v: f64 = rng.sample(rand_distr::StandardNormal);
                v
            });
            let mut y = DMatrix::zeros(1, n);
            for j in 0..n {
                let noise: f64 = rng.sample(rand_distr::StandardNormal);
                y[(0, j)] = 2.0 * x[(3, j)] + 0.05 * noise;
            }
            let data = Dataset::new(x, y).unwrap();
            let config = FitConfig {
                lambda: 0.0,
                epsilon: 1e-3,
                max_iter: 20,
                seed,
                ..Default::default()
            };
            let state = sequential_fit(&data, &config, &HyperpriorConfig::default()).unwrap();
            assert!(state.alpha.is_active(3), "seed {seed}: relevant feature dropped");
            // The evidence criterion admits weakly supported noise features
            // (their gain is a chi-square fluctuation of the refit V), so
            // exact support recovery is not guaranteed; what must hold is
            // that the relevant coefficient dominates every spurious one.
            let w3 = state.w[(0, 3)].abs();
            for j in (0..d).filter(|&j| j != 3) {
                assert!(
                    state.w[(0, j)].abs() < 0.1 * w3,
                    "seed {seed}: spurious w[{j}] = {} vs w[3] = {w3}",
                    state.w[(0, j)]
                );
            }
            if state.alpha.active_indices() == vec![3] {
                hits += 1;
            }
        }
        // Exact recovery should still happen for at least one seed.
        assert!(hits >= 1, "exact recovery in {hits}/20 runs");
    }

    #[test]
    fn accepted_mlf_sequence_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let data = random_dataset(&mut rng, 8, 3, 30);
        let config = FitConfig {
            lambda: 0.05,
            epsilon: 1e-4,
            max_iter: 10,
            seed: 4,
            ..Default::default()
        };
        let state = sequential_fit(&data, &config, &HyperpriorConfig::default()).unwrap();
        for w in state.trace.windows(2) {
            assert!(
                -w[1].neg_log_mlf > -w[0].neg_log_mlf,
                "accepted MLF did not increase"
            );
        }
        assert!(assert_pd(&state.omega).is_ok());
    }

    #[test]
    fn rollback_leaves_state_identical() {
        // Snapshot/restore is a full clone; verify the clone really is
        // bit-identical over every field after a forced roundtrip.
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let data = random_dataset(&mut rng, 5, 2, 8);
        let state = state_for(&data, &[0, 2], 1.3);
        let snapshot = state.clone();
        let mut mutated = state.clone();
        apply_action(&mut mutated, 1, Action::Add { alpha_new: 0.7 });
        refresh_state(&data, &mut mutated).unwrap();
        let restored = snapshot.clone();
        assert_eq!(restored.active, state.active);
        assert_eq!(restored.alpha, state.alpha);
        assert_eq!(restored.q_cache, state.q_cache);
        assert_eq!(restored.s_cache, state.s_cache);
        assert_eq!(restored.v, state.v);
        assert_eq!(restored.omega, state.omega);
        assert_eq!(restored.mlf.to_bits(), state.mlf.to_bits());
    }
}
