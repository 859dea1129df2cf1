//! Synthetic-data generation with known sparse ground truth, plus the
//! support-recovery metrics used to score an estimate against it.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NardError, Result};
use crate::matrix::symmetrize;
use crate::types::Dataset;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Number of input features d.
    pub d: usize,
    /// Number of outputs m.
    pub m: usize,
    /// Number of samples N.
    pub n: usize,
    /// Fraction of W entries that are nonzero, in [0, 1].
    pub w_sparsity: f64,
    /// Erdos-Renyi edge probability for the precision graph, in [0, 1].
    pub edge_prob: f64,
    /// Magnitude range for nonzero W entries.
    #[serde(default = "default_w_range")]
    pub w_range: (f64, f64),
    /// Magnitude range for off-diagonal precision entries.
    #[serde(default = "default_omega_range")]
    pub omega_offdiag_range: (f64, f64),
    /// Floor on the smallest eigenvalue of the generated precision matrix.
    #[serde(default = "default_min_eigen")]
    pub min_eigen: f64,
    pub seed: u64,
}

fn default_w_range() -> (f64, f64) {
    (0.5, 2.0)
}

fn default_omega_range() -> (f64, f64) {
    (0.4, 0.8)
}

fn default_min_eigen() -> f64 {
    0.1
}

impl SynthSpec {
    /// Spec with the default generation constants.
    pub fn new(d: usize, m: usize, n: usize, w_sparsity: f64, edge_prob: f64, seed: u64) -> Self {
        SynthSpec {
            d,
            m,
            n,
            w_sparsity,
            edge_prob,
            w_range: default_w_range(),
            omega_offdiag_range: default_omega_range(),
            min_eigen: default_min_eigen(),
            seed,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_range.0 <= self.w_range.1)
            || !(self.omega_offdiag_range.0 <= self.omega_offdiag_range.1)
            || !(self.min_eigen > 0.0)
        {
            return Err(NardError::InvalidParameter(
                "ranges must be well-ordered and min_eigen > 0".into(),
            ));
        }
        if self.d == 0 || self.m == 0 || self.n == 0 {
            return Err(NardError::InvalidParameter(
                "d, m, and n must all be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.w_sparsity) {
            return Err(NardError::InvalidParameter(format!(
                "w_sparsity must lie in [0, 1], got {}",
                self.w_sparsity
            )));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(NardError::InvalidParameter(format!(
                "edge_prob must lie in [0, 1], got {}",
                self.edge_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// True coefficients, m x d.
    pub w: DMatrix<f64>,
    /// True precision matrix, m x m, symmetric positive definite.
    pub omega: DMatrix<f64>,
}

/// Draw a dataset: W sparse with nonzeros uniform on [0.5, 2] with random
/// sign, Omega from an Erdos-Renyi graph with off-diagonal magnitudes
/// uniform on [0.4, 0.8] and the spectrum shifted to be positive definite,
/// X ~ N(0, I) columns, noise rows E ~ N(0, Omega^{-1}).
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    // Coefficients: choose exactly round(w_sparsity * m * d) positions.
    let total = spec.m * spec.d;
    let n_nonzero = ((spec.w_sparsity * total as f64).round() as usize).min(total);
    let mut positions: Vec<usize> = (0..total).collect();
    positions.shuffle(&mut rng);
    let mut w = DMatrix::zeros(spec.m, spec.d);
    for &pos in positions.iter().take(n_nonzero) {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        w[(pos % spec.m, pos / spec.m)] = sign * rng.gen_range(spec.w_range.0..=spec.w_range.1);
    }

    // Precision matrix from an Erdos-Renyi skeleton.
    let mut omega = DMatrix::identity(spec.m, spec.m);
    for i in 0..spec.m {
        for j in (i + 1)..spec.m {
            if rng.gen_bool(spec.edge_prob) {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let v = sign
                    * rng.gen_range(spec.omega_offdiag_range.0..=spec.omega_offdiag_range.1);
                omega[(i, j)] = v;
                omega[(j, i)] = v;
            }
        }
    }
    // Shift the spectrum so the smallest eigenvalue is at least the floor.
    let eig = SymmetricEigen::new(omega.clone());
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < spec.min_eigen {
        let shift = spec.min_eigen - min_eig;
        for i in 0..spec.m {
            omega[(i, i)] += shift;
        }
    }
    let omega = symmetrize(&omega);

    // X with standard normal entries.
    let x = DMatrix::from_fn(spec.d, spec.n, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z
    });

    // Noise E ~ N(0, Omega^{-1}) per column: E = L^{-T} Z with Omega = L L^T.
    let chol = omega
        .clone()
        .cholesky()
        .ok_or_else(|| NardError::NumericDegeneracy("generated precision not PD".into()))?;
    let z = DMatrix::from_fn(spec.m, spec.n, |_, _| {
        let v: f64 = rng.sample(StandardNormal);
        v
    });
    let e = chol.l().transpose().solve_upper_triangular(&z).ok_or_else(|| {
        NardError::NumericDegeneracy("triangular solve failed in noise generation".into())
    })?;

    let y = &w * &x + e;
    let data = Dataset::new(x, y)?;
    Ok((data, GroundTruth { w, omega }))
}

/// Support pattern of a coefficient matrix: |entry| > tol.
pub fn support(mat: &DMatrix<f64>, tol: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            if mat[(i, j)].abs() > tol {
                out.push((i, j));
            }
        }
    }
    out
}

/// Support pattern of a precision matrix: strictly upper-triangular
/// entries only (the diagonal is always nonzero and carries no graph
/// information).
pub fn precision_support(omega: &DMatrix<f64>, tol: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..omega.nrows() {
        for j in (i + 1)..omega.ncols() {
            if omega[(i, j)].abs() > tol {
                out.push((i, j));
            }
        }
    }
    out
}

/// True/false positive rates of an estimated support against the truth,
/// over a universe of `total` candidate positions. With no true positives
/// in the universe the TPR is defined as 1.0; with no true negatives the
/// FPR is defined as 0.0.
pub fn tpr_fpr(
    estimated: &[(usize, usize)],
    truth: &[(usize, usize)],
    total: usize,
) -> (f64, f64) {
    use std::collections::HashSet;
    let est: HashSet<_> = estimated.iter().collect();
    let tru: HashSet<_> = truth.iter().collect();
    let tp = est.intersection(&tru).count();
    let fp = est.len() - tp;
    let positives = tru.len();
    let negatives = total.saturating_sub(positives);
    let tpr = if positives == 0 { 1.0 } else { tp as f64 / positives as f64 };
    let fpr = if negatives == 0 { 0.0 } else { fp as f64 / negatives as f64 };
    (tpr, fpr)
}

/// Jaccard index of two supports; two empty supports score 1.0.
pub fn jaccard(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    use std::collections::HashSet;
    let sa: HashSet<_> = a.iter().collect();
    let sb: HashSet<_> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        SynthSpec::new(8, 4, 50, 0.25, 0.3, 7)
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, ga) = generate(&spec()).unwrap();
        let (b, gb) = generate(&spec()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(ga.w, gb.w);
        assert_eq!(ga.omega, gb.omega);
        let mut other = spec();
        other.seed = 8;
        assert_ne!(generate(&other).unwrap().0.x, a.x);
    }

    #[test]
    fn w_sparsity_is_exact() {
        let (_, g) = generate(&spec()).unwrap();
        let nz = support(&g.w, 0.0).len();
        assert_eq!(nz, (0.25f64 * 32.0).round() as usize);
        for (i, j) in support(&g.w, 0.0) {
            let v = g.w[(i, j)].abs();
            assert!((0.5..=2.0).contains(&v), "magnitude {v} out of range");
        }
    }

    #[test]
    fn omega_is_positive_definite() {
        for seed in 0..20 {
            let mut s = spec();
            s.seed = seed;
            s.edge_prob = 0.8;
            let (_, g) = generate(&s).unwrap();
            let eig = SymmetricEigen::new(g.omega.clone());
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= s.min_eigen - 1e-10, "min eig {min}");
        }
    }

    #[test]
    fn noise_covariance_matches_omega_inverse() {
        // With W = 0 the rows of Y are pure noise; the sample covariance
        // should approach Omega^{-1}.
        let s = SynthSpec::new(2, 3, 20_000, 0.0, 0.5, 3);
        let (data, g) = generate(&s).unwrap();
        let emp = &data.y * data.y.transpose() / s.n as f64;
        let cov = g.omega.clone().try_inverse().unwrap();
        assert!(crate::matrix::max_abs(&(emp - cov)) < 0.05);
    }

    #[test]
    fn tpr_fpr_basic_and_sentinels() {
        let truth = vec![(0, 0), (1, 1)];
        let est = vec![(0, 0), (0, 1)];
        let (tpr, fpr) = tpr_fpr(&est, &truth, 4);
        assert_eq!(tpr, 0.5);
        assert_eq!(fpr, 0.5);
        // No positives in truth: TPR = 1.
        let (tpr, fpr) = tpr_fpr(&est, &[], 4);
        assert_eq!(tpr, 1.0);
        assert_eq!(fpr, 0.5);
        // No negatives: FPR = 0.
        let all = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
        let (tpr, fpr) = tpr_fpr(&all, &all, 4);
        assert_eq!(tpr, 1.0);
        assert_eq!(fpr, 0.0);
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&[], &[]), 1.0);
        assert_eq!(jaccard(&[(0, 1)], &[]), 0.0);
        assert_eq!(jaccard(&[(0, 1), (1, 2)], &[(1, 2), (2, 3)]), 1.0 / 3.0);
        assert_eq!(jaccard(&[(0, 1)], &[(0, 1)]), 1.0);
    }

    #[test]
    fn precision_support_ignores_diagonal() {
        let omega = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        assert!(precision_support(&omega, 1e-10).is_empty());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec();
        s.w_sparsity = 1.5;
        assert!(generate(&s).is_err());
        let mut s = spec();
        s.d = 0;
        assert!(generate(&s).is_err());
    }
}
