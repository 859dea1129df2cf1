use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Debug, Error)]
pub enum NardError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite (failed at pivot {pivot})")]
    NotPositiveDefinite {
        /// 1-based index of the first non-positive pivot.
        pivot: usize,
    },

    #[error("matrix is not symmetric (max asymmetry {max_asym:.3e} > {tol:.1e})")]
    NotSymmetric { max_asym: f64, tol: f64 },

    #[error(
        "factorization failed even after diagonal jitter up to {max_jitter:.3e}; \
         the matrix is numerically singular"
    )]
    Conditioning { max_jitter: f64 },

    #[error("all features are pruned; the model is empty")]
    EmptyModel,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate denominator for feature {feature}: alpha_i == S_i within 1e-12")]
    DegenerateDenominator { feature: usize },

    #[error("numeric degeneracy: {0}")]
    NumericDegeneracy(String),

    #[error("fold {fold} is too small to form a positive definite empirical covariance")]
    FoldTooSmall { fold: usize },

    #[error("iterate diverged: {0}")]
    Instability(String),

    #[error("feature expansion would produce {dim} rows (limit {limit})")]
    ExpansionTooLarge { dim: usize, limit: usize },

    #[error("parse error at line {line}{}: {msg}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        line: usize,
        column: Option<usize>,
        msg: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NardError>;

impl NardError {
    /// True for failures of numerical origin (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            NardError::NotPositiveDefinite { .. }
                | NardError::Conditioning { .. }
                | NardError::DegenerateDenominator { .. }
                | NardError::NumericDegeneracy(_)
                | NardError::Instability(_)
        )
    }
}
