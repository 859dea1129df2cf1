//! Dense-matrix primitives shared by the solvers: PD factorizations with a
//! jitter fallback, Woodbury inversion, rank-one determinant/inverse updates
//! and a power-iteration spectral radius.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{NardError, Result};

pub const SYMMETRY_TOL: f64 = 1e-8;

/// Triangular factorization handle for a symmetric PD matrix.
/// Supports solves and the log-determinant.
#[derive(Debug, Clone)]
pub struct PdFactor {
    /// Lower-triangular Cholesky factor.
    l: DMatrix<f64>,
}

impl PdFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.l.nrows()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// Solve A x = b in place for each column of b.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        self.l.tr_solve_lower_triangular_mut(&mut x);
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        self.l.tr_solve_lower_triangular_mut(&mut x);
        x
    }

    /// Dense inverse, symmetrized.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.l.nrows();
        let inv = self.solve_mat(&DMatrix::identity(n, n));
        symmetrize(&inv)
    }
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (a + a.transpose())
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn check_symmetry(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(NardError::Dimension(format!(
            "expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut max_asym = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            max_asym = max_asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    // Scale-relative: entries of V*Omega products drift with magnitude.
    let scale = max_abs(a).max(1.0);
    if max_asym > SYMMETRY_TOL * scale {
        return Err(NardError::NotSymmetric {
            max_asym,
            tol: SYMMETRY_TOL,
        });
    }
    Ok(())
}

/// Succeeds iff `a` is symmetric PD; the error names the failing pivot
/// (1-based). Row-oriented Cholesky, adequate for the m x m and p x p
/// matrices this is used on.
pub fn assert_pd(a: &DMatrix<f64>) -> Result<PdFactor> {
    check_symmetry(a)?;
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(NardError::NotPositiveDefinite { pivot: j + 1 });
        }
        let dj = diag.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / dj;
        }
    }
    Ok(PdFactor { l })
}

/// Cholesky with a jitter fallback: on failure, add 1e-10 * mean(diag) to
/// the diagonal and retry up to 3 times with 10x escalation.
/// Returns the factor and the jitter that was applied (0.0 if none).
pub fn cholesky_jitter(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok((chol, 0.0));
    }
    let n = a.nrows();
    let mean_diag = (0..n).map(|i| a[(i, i)].abs()).sum::<f64>() / n.max(1) as f64;
    let mut jitter = 1e-10 * mean_diag.max(f64::MIN_POSITIVE);
    for _ in 0..3 {
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(b) {
            return Ok((chol, jitter));
        }
        jitter *= 10.0;
    }
    Err(NardError::Conditioning { max_jitter: jitter })
}

/// log |A| from an existing nalgebra Cholesky.
pub fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Inputs of the rank-one lemmas: C = C_rest + phi phi^T / alpha_i.
#[derive(Debug, Clone)]
pub struct RankOneUpdate {
    /// Inverse of the matrix without feature i's contribution (N x N, PD).
    pub c_inv_prev: DMatrix<f64>,
    /// i-th row of X, length N.
    pub phi: DVector<f64>,
    pub alpha_i: f64,
}

impl RankOneUpdate {
    pub fn new(c_inv_prev: DMatrix<f64>, phi: DVector<f64>, alpha_i: f64) -> Result<Self> {
        if !(alpha_i > 0.0) {
            return Err(NardError::InvalidParameter(
                "rank-one update requires alpha_i > 0".into(),
            ));
        }
        if c_inv_prev.nrows() != phi.len() {
            return Err(NardError::Dimension(format!(
                "c_inv_prev is {}x{} but phi has length {}",
                c_inv_prev.nrows(),
                c_inv_prev.ncols(),
                phi.len()
            )));
        }
        Ok(RankOneUpdate {
            c_inv_prev,
            phi,
            alpha_i,
        })
    }
}

/// |C| / |C_rest| = 1 + phi^T C_rest^{-1} phi / alpha_i.
pub fn rank_one_det_ratio(u: &RankOneUpdate) -> f64 {
    let quad = (u.phi.transpose() * &u.c_inv_prev * &u.phi)[(0, 0)];
    1.0 + quad / u.alpha_i
}

/// C^{-1} = C_rest^{-1} - C_rest^{-1} phi phi^T C_rest^{-1} / (alpha_i + phi^T C_rest^{-1} phi).
pub fn rank_one_inv_update(u: &RankOneUpdate) -> DMatrix<f64> {
    let v = &u.c_inv_prev * &u.phi;
    let quad = u.phi.dot(&v);
    let denom = u.alpha_i + quad;
    let update = &v * v.transpose() / denom;
    symmetrize(&(&u.c_inv_prev - update))
}

/// C^{-1} = (I + X^T K^{-1} X)^{-1} = I - X^T S_xx^{-1} X with
/// S_xx = X X^T + K, computed without forming any N x N factorization.
pub fn woodbury_c_inverse(x_active: &DMatrix<f64>, k_active: &[f64]) -> Result<DMatrix<f64>> {
    let n = x_active.ncols();
    if k_active.len() != x_active.nrows() {
        return Err(NardError::Dimension(format!(
            "k has {} entries for {} features",
            k_active.len(),
            x_active.nrows()
        )));
    }
    if k_active.iter().any(|k| !(*k > 0.0)) {
        return Err(NardError::InvalidParameter("k entries must be > 0".into()));
    }
    let mut sxx = x_active * x_active.transpose();
    for (i, k) in k_active.iter().enumerate() {
        sxx[(i, i)] += k;
    }
    let (chol, _) = cholesky_jitter(&sxx)?;
    let solved = chol.solve(x_active); // S_xx^{-1} X
    let mut c_inv = DMatrix::identity(n, n);
    c_inv -= x_active.transpose() * solved;
    Ok(symmetrize(&c_inv))
}

/// Y C^{-1} Y^T computed through the same Woodbury route (m x m output,
/// never materializing the N x N matrix).
pub fn y_cinv_yt(
    y: &DMatrix<f64>,
    x_active: &DMatrix<f64>,
    k_active: &[f64],
) -> Result<DMatrix<f64>> {
    if k_active.is_empty() {
        return Ok(symmetrize(&(y * y.transpose())));
    }
    let mut sxx = x_active * x_active.transpose();
    for (i, k) in k_active.iter().enumerate() {
        sxx[(i, i)] += k;
    }
    let (chol, _) = cholesky_jitter(&sxx)?;
    let yxt = y * x_active.transpose(); // m x p
    let solved = chol.solve(&yxt.transpose()); // p x m
    Ok(symmetrize(&(y * y.transpose() - yxt * solved)))
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralRadius {
    /// Largest eigenvalue of X X^T.
    pub value: f64,
    pub converged: bool,
    pub iters: usize,
}

/// Power iteration on X X^T (applied as X (X^T v)), deterministic all-ones
/// start with a basis-vector fallback when the start is orthogonal to the
/// dominant eigenvector.
pub fn spectral_radius(x: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<SpectralRadius> {
    spectral_radius_warm(x, tol, max_iter, None).map(|(sr, _)| sr)
}

/// `spectral_radius` with an optional warm-start vector (length = rows of
/// `x`); returns the dominant eigenvector alongside, so callers tracking a
/// slowly changing matrix can restart from the previous solution.
pub fn spectral_radius_warm(
    x: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
    start: Option<&DVector<f64>>,
) -> Result<(SpectralRadius, DVector<f64>)> {
    let d = x.nrows();
    if d == 0 || x.iter().all(|v| *v == 0.0) {
        return Err(NardError::InvalidParameter(
            "spectral_radius requires a nonzero matrix".into(),
        ));
    }
    let mut v = match start {
        Some(s) if s.len() == d && s.norm() > 0.0 => s / s.norm(),
        _ => DVector::from_element(d, 1.0 / (d as f64).sqrt()),
    };
    let mut lambda = 0.0f64;
    let mut fallback = 0usize;
    for it in 0..max_iter {
        let w = x * (x.transpose() * &v);
        let norm = w.norm();
        if norm == 0.0 {
            // start vector in the null space; rotate to the next basis vector
            if fallback >= d {
                return Err(NardError::NumericDegeneracy(
                    "power iteration start vectors all lie in the null space".into(),
                ));
            }
            v = DVector::zeros(d);
            v[fallback] = 1.0;
            fallback += 1;
            continue;
        }
        let lambda_new = v.dot(&w); // Rayleigh quotient, v normalized
        v = w / norm;
        if it > 0 && (lambda_new - lambda).abs() <= tol * lambda_new.abs().max(f64::MIN_POSITIVE) {
            return Ok((
                SpectralRadius {
                    value: lambda_new,
                    converged: true,
                    iters: it + 1,
                },
                v,
            ));
        }
        lambda = lambda_new;
    }
    Ok((
        SpectralRadius {
            value: lambda,
            converged: false,
            iters: max_iter,
        },
        v,
    ))
}
