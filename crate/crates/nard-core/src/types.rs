//! Shared domain types: data, per-feature precisions, solver configuration
//! and the fitted-model state returned by every solver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NardError, Result};

/// A regression problem: features `x` (d x N) and responses `y` (m x N),
/// one sample per column.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(NardError::Dimension(format!(
                "x has {} columns but y has {}",
                x.ncols(),
                y.ncols()
            )));
        }
        if x.ncols() == 0 {
            return Err(NardError::Dimension("need at least one sample".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(NardError::InvalidParameter(
                "x and y must contain only finite values".into(),
            ));
        }
        Ok(Dataset {
            x,
            y,
            feature_names: None,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.x.nrows() {
            return Err(NardError::Dimension(format!(
                "{} feature names for {} features",
                names.len(),
                self.x.nrows()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn num_features(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_outputs(&self) -> usize {
        self.y.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.x.ncols()
    }

    /// Sub-dataset keeping the given sample columns (used by CV folds).
    pub fn select_samples(&self, cols: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_columns(cols.iter()),
            y: self.y.select_columns(cols.iter()),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// One per-feature precision. `Pruned` stands for alpha = infinity; the
/// feature is excluded from the active model. A float sentinel is never
/// used, so 1/alpha arithmetic stays NaN-free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Finite(f64),
    Pruned,
}

impl Alpha {
    pub fn is_pruned(&self) -> bool {
        matches!(self, Alpha::Pruned)
    }

    /// 1/alpha, with pruned entries contributing exactly 0.
    pub fn reciprocal(&self) -> f64 {
        match self {
            Alpha::Finite(a) => 1.0 / a,
            Alpha::Pruned => 0.0,
        }
    }
}

/// Length-d vector of feature precisions; entries are either finite and
/// strictly positive, or pruned.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVector {
    entries: Vec<Alpha>,
}

impl AlphaVector {
    pub fn uniform(d: usize, value: f64) -> Result<Self> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(NardError::InvalidParameter(format!(
                "alpha must be finite and > 0, got {value}"
            )));
        }
        Ok(AlphaVector {
            entries: vec![Alpha::Finite(value); d],
        })
    }

    /// All entries pruned (empty model).
    pub fn all_pruned(d: usize) -> Self {
        AlphaVector {
            entries: vec![Alpha::Pruned; d],
        }
    }

    pub fn from_entries(entries: Vec<Alpha>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if let Alpha::Finite(a) = e {
                if !(*a > 0.0) || !a.is_finite() {
                    return Err(NardError::InvalidParameter(format!(
                        "alpha[{i}] must be finite and > 0, got {a}"
                    )));
                }
            }
        }
        Ok(AlphaVector { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Alpha {
        self.entries[i]
    }

    pub fn set(&mut self, i: usize, value: f64) -> Result<()> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(NardError::InvalidParameter(format!(
                "alpha[{i}] must be finite and > 0, got {value}"
            )));
        }
        self.entries[i] = Alpha::Finite(value);
        Ok(())
    }

    pub fn prune(&mut self, i: usize) {
        self.entries[i] = Alpha::Pruned;
    }

    pub fn is_active(&self, i: usize) -> bool {
        !self.entries[i].is_pruned()
    }

    /// Indices of unpruned features, in ascending order.
    pub fn active_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.is_pruned())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn num_active(&self) -> usize {
        self.entries.iter().filter(|e| !e.is_pruned()).count()
    }

    /// Finite alpha values over the active set, aligned with `active_indices`.
    pub fn active_values(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                Alpha::Finite(a) => Some(*a),
                Alpha::Pruned => None,
            })
            .collect()
    }

    /// 1/alpha for every entry; pruned entries are exactly 0.
    pub fn reciprocals(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.entries.iter().map(|e| e.reciprocal()))
    }

    /// Prune every entry whose value exceeds the threshold.
    pub fn apply_threshold(&mut self, threshold: f64) {
        for e in self.entries.iter_mut() {
            if let Alpha::Finite(a) = e {
                if *a > threshold {
                    *e = Alpha::Pruned;
                }
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Alpha> {
        self.entries.iter()
    }
}

/// Per-iteration diagnostics recorded by every solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub neg_log_mlf: f64,
    pub max_delta_inv_alpha: f64,
    pub active_count: usize,
}

/// Fitted-model state shared by all solvers.
#[derive(Debug, Clone)]
pub struct ArdState {
    pub alpha: AlphaVector,
    /// Row covariance V (m x m, symmetric PD).
    pub v: DMatrix<f64>,
    /// Precision Omega = V^{-1} (m x m, symmetric PD).
    pub omega: DMatrix<f64>,
    /// Coefficients, m x d; columns of pruned features are exactly zero.
    pub w: DMatrix<f64>,
    /// Posterior mean over the active set (m x p).
    pub mu: DMatrix<f64>,
    /// Posterior column covariance over the active set (p x p).
    pub sigma: DMatrix<f64>,
    pub iter: usize,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
}

/// Prior on the per-feature precisions alpha.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum AlphaPrior {
    Flat,
    Gamma { shape: f64, rate: f64 },
}

/// Prior on the row covariance V. For the inverse-Wishart variant, only the
/// V-update formula is implemented (no matrix-T marginal).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum VPrior {
    Flat,
    InverseWishart {
        /// Scale matrix, row-major m x m; must be symmetric PD.
        psi: Vec<Vec<f64>>,
        nu: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HyperpriorConfig {
    pub alpha_prior: AlphaPrior,
    pub v_prior: VPrior,
}

impl Default for HyperpriorConfig {
    fn default() -> Self {
        HyperpriorConfig {
            alpha_prior: AlphaPrior::Flat,
            v_prior: VPrior::Flat,
        }
    }
}

impl HyperpriorConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if let AlphaPrior::Gamma { shape, rate } = &self.alpha_prior {
            // rate = 0 is admitted so Gamma(1, 0) degenerates to the flat prior.
            if !(*shape > 0.0) || !(*rate >= 0.0) {
                return Err(NardError::InvalidParameter(
                    "Gamma prior requires shape > 0 and rate >= 0".into(),
                ));
            }
        }
        if let VPrior::InverseWishart { psi, nu } = &self.v_prior {
            if !(*nu > 0.0) {
                return Err(NardError::InvalidParameter(
                    "inverse-Wishart prior requires nu > 0".into(),
                ));
            }
            if psi.len() != m || psi.iter().any(|row| row.len() != m) {
                return Err(NardError::Dimension(format!("psi must be {m} x {m}")));
            }
        }
        Ok(())
    }

    /// psi as a dense matrix, when the inverse-Wishart prior is set.
    pub fn psi_matrix(&self) -> Option<DMatrix<f64>> {
        match &self.v_prior {
            VPrior::InverseWishart { psi, .. } => {
                let m = psi.len();
                Some(DMatrix::from_fn(m, m, |i, j| psi[i][j]))
            }
            VPrior::Flat => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub enum Method {
    Nard,
    Sequential,
    Surrogate,
    Hybrid,
}

impl std::str::FromStr for Method {
    type Err = NardError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nard" => Ok(Method::Nard),
            "sequential" => Ok(Method::Sequential),
            "surrogate" => Ok(Method::Surrogate),
            "hybrid" => Ok(Method::Hybrid),
            other => Err(NardError::InvalidParameter(format!(
                "unknown method '{other}' (expected nard|sequential|surrogate|hybrid)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitConfig {
    /// Graphical-lasso penalty, >= 0.
    pub lambda: f64,
    /// Convergence tolerance on max |delta(1/alpha)| (vanilla/surrogate) or
    /// on the best marginal-likelihood gain per pass (sequential/hybrid).
    pub epsilon: f64,
    pub max_iter: usize,
    /// Alpha entries above this are pruned.
    pub prune_threshold: f64,
    pub method: Method,
    pub seed: u64,
    /// Sequential/hybrid only: scan candidates in index order instead of
    /// seeded random order. Used by deterministic tests.
    pub round_robin: bool,
    /// Hybrid only: surrogate sweeps per accepted screening action.
    pub surrogate_sweeps: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: 0.1,
            epsilon: 1e-4,
            max_iter: 100,
            prune_threshold: 1e12,
            method: Method::Nard,
            seed: 0,
            round_robin: false,
            surrogate_sweeps: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(NardError::InvalidParameter("epsilon must be > 0".into()));
        }
        if self.max_iter < 1 {
            return Err(NardError::InvalidParameter("max_iter must be >= 1".into()));
        }
        if !(self.prune_threshold > 0.0) {
            return Err(NardError::InvalidParameter(
                "prune_threshold must be > 0".into(),
            ));
        }
        if !(self.lambda >= 0.0) {
            return Err(NardError::InvalidParameter("lambda must be >= 0".into()));
        }
        if self.surrogate_sweeps < 1 {
            return Err(NardError::InvalidParameter(
                "surrogate_sweeps must be >= 1".into(),
            ));
        }
        Ok(())
    }
}
