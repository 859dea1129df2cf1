//! Joint estimation of a sparse multi-output coefficient matrix and a
//! sparse precision matrix over the outputs, by automatic relevance
//! determination with a matrix-normal prior and an embedded graphical
//! lasso. Four solvers share one model state: the vanilla fixed-point
//! iteration, a sequential (constructive) variant, a surrogate
//! majorize-minimize variant, and a hybrid of the last two.

pub mod error;
pub mod glasso;
pub mod io;
pub mod kernels;
pub mod matrix;
pub mod mlf;
pub mod sequential;
pub mod surrogate;
pub mod synth;
pub mod types;
pub mod vanilla;

pub use error::{NardError, Result};
pub use glasso::{glasso_fit, glasso_objective, select_lambda, GlassoConfig, GlassoResult};
pub use io::{load_matrix, load_model, parse_matrix, save_matrix, save_model, ModelDocument, RunManifest};
pub use kernels::KernelSpec;
pub use mlf::neg_log_mlf;
pub use sequential::sequential_fit;
pub use surrogate::{hybrid_fit, surrogate_fit};
pub use synth::{generate, jaccard, precision_support, support, tpr_fpr, GroundTruth, SynthSpec};
pub use types::{
    Alpha, AlphaPrior, AlphaVector, ArdState, Dataset, FitConfig, HyperpriorConfig, Method,
    TraceEntry, VPrior,
};
pub use vanilla::nard_fit;

use types::Method::*;

/// Dispatch to the solver named in the configuration.
pub fn fit(data: &Dataset, config: &FitConfig, hyper: &HyperpriorConfig) -> Result<ArdState> {
    match config.method {
        Nard => nard_fit(data, config, hyper),
        Sequential => sequential_fit(data, config, hyper),
        Surrogate => surrogate_fit(data, config, hyper),
        Hybrid => hybrid_fit(data, config, hyper),
    }
}
