//! Feature-map expansions applied to the design matrix before fitting:
//! exact low-degree polynomial maps and random Fourier features for the
//! RBF kernel. Both operate on X as d x N (features in rows).

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NardError, Result};
use crate::types::Dataset;

/// Hard cap on the expanded feature count.
pub const MAX_EXPANDED_FEATURES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// Identity map: the design matrix is used as-is.
    None,
    /// All monomials of total degree 1..=degree, optionally with a constant
    /// bias row. Degree must be 2 or 3.
    Polynomial { degree: u32, include_bias: bool },
    /// Random Fourier features for the RBF kernel exp(-gamma ||u - v||^2):
    /// z_j(u) = sqrt(2/D) cos(omega_j . u + b_j), omega_j ~ N(0, 2 gamma I),
    /// b_j ~ U[0, 2 pi).
    RbfRandomFeatures {
        gamma: f64,
        n_features: usize,
        seed: u64,
    },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::None => Ok(()),
            KernelSpec::Polynomial { degree, .. } => {
                if !(2..=3).contains(degree) {
                    return Err(NardError::InvalidParameter(format!(
                        "polynomial degree must be 2 or 3, got {degree}"
                    )));
                }
                Ok(())
            }
            KernelSpec::RbfRandomFeatures { gamma, n_features, .. } => {
                if !(*gamma > 0.0) || !gamma.is_finite() {
                    return Err(NardError::InvalidParameter(format!(
                        "RBF gamma must be positive and finite, got {gamma}"
                    )));
                }
                if *n_features == 0 {
                    return Err(NardError::InvalidParameter(
                        "RBF feature count must be at least 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Number of output features for a d-dimensional input.
    pub fn output_dim(&self, d: usize) -> Result<usize> {
        self.validate()?;
        let dim = match self {
            KernelSpec::None => d,
            KernelSpec::Polynomial { degree, include_bias } => {
                let mut total = if *include_bias { 1usize } else { 0 };
                for deg in 1..=*degree {
                    total = total
                        .checked_add(n_monomials(d, deg as usize))
                        .ok_or(NardError::ExpansionTooLarge {
                            dim: usize::MAX,
                            limit: MAX_EXPANDED_FEATURES,
                        })?;
                }
                total
            }
            KernelSpec::RbfRandomFeatures { n_features, .. } => *n_features,
        };
        if dim > MAX_EXPANDED_FEATURES {
            return Err(NardError::ExpansionTooLarge {
                dim,
                limit: MAX_EXPANDED_FEATURES,
            });
        }
        Ok(dim)
    }

    /// Expand the design matrix of `data`; Y passes through unchanged.
    /// Feature names record the provenance of each expanded row.
    pub fn expand(&self, data: &Dataset) -> Result<Dataset> {
        let d = data.num_features();
        let n = data.num_samples();
        let out_dim = self.output_dim(d)?;
        let base_name = |i: usize| -> String {
            data.feature_names
                .as_ref()
                .map(|v| v[i].clone())
                .unwrap_or_else(|| format!("x{i}"))
        };

        let (x_new, names) = match self {
            KernelSpec::None => (data.x.clone(), (0..d).map(base_name).collect()),
            KernelSpec::Polynomial { degree, include_bias } => {
                let mut exponents: Vec<Vec<usize>> = Vec::with_capacity(out_dim);
                if *include_bias {
                    exponents.push(vec![0; d]);
                }
                for deg in 1..=*degree as usize {
                    push_monomials(d, deg, &mut exponents);
                }
                debug_assert_eq!(exponents.len(), out_dim);
                let mut x_new = DMatrix::zeros(out_dim, n);
                for (r, expo) in exponents.iter().enumerate() {
                    for c in 0..n {
                        let mut v = 1.0;
                        for (i, &e) in expo.iter().enumerate() {
                            for _ in 0..e {
                                v *= data.x[(i, c)];
                            }
                        }
                        x_new[(r, c)] = v;
                    }
                }
                let names = exponents.iter().map(|expo| monomial_name(expo, &base_name)).collect();
                (x_new, names)
            }
            KernelSpec::RbfRandomFeatures { gamma, n_features, seed } => {
                let mut rng = ChaCha20Rng::seed_from_u64(*seed);
                // Frequencies for the kernel exp(-gamma r^2) have covariance
                // 2 gamma I.
                let scale = (2.0 * gamma).sqrt();
                let omega = DMatrix::from_fn(*n_features, d, |_, _| {
                    let z: f64 = rng.sample(StandardNormal);
                    scale * z
                });
                let phase: Vec<f64> = (0..*n_features)
                    .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                    .collect();
                let amp = (2.0 / *n_features as f64).sqrt();
                let proj = &omega * &data.x;
                let x_new =
                    DMatrix::from_fn(*n_features, n, |r, c| amp * (proj[(r, c)] + phase[r]).cos());
                let names = (0..*n_features).map(|j| format!("rff{j}")).collect();
                (x_new, names)
            }
        };

        let mut out = Dataset::new(x_new, data.y.clone())?;
        out.feature_names = Some(names);
        Ok(out)
    }
}

/// Count of monomials in d variables with total degree exactly `deg`:
/// C(d + deg - 1, deg).
fn n_monomials(d: usize, deg: usize) -> usize {
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for k in 0..deg {
        num = num.saturating_mul((d + k) as u128);
        den *= (k + 1) as u128;
    }
    (num / den).min(usize::MAX as u128) as usize
}

/// Append exponent vectors of total degree exactly `deg` in graded
/// lexicographic order of variable indices.
fn push_monomials(d: usize, deg: usize, out: &mut Vec<Vec<usize>>) {
    fn recurse(d: usize, start: usize, remaining: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining == 0 {
            out.push(current.clone());
            return;
        }
        for i in start..d {
            current[i] += 1;
            recurse(d, i, remaining - 1, current, out);
            current[i] -= 1;
        }
    }
    let mut current = vec![0usize; d];
    recurse(d, 0, deg, &mut current, out);
}

fn monomial_name(expo: &[usize], base_name: &impl Fn(usize) -> String) -> String {
    if expo.iter().all(|&e| e == 0) {
        return "1".into();
    }
    expo.iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(i, &e)| {
            if e == 1 {
                base_name(i)
            } else {
                format!("{}^{e}", base_name(i))
            }
        })
        .collect::<Vec<_>>()
        .join("*")
}
