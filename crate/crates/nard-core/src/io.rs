//! File formats: headerless CSV for matrices, JSON for fitted models, and
//! the run manifest written alongside every output for reproducibility.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{NardError, Result};
use crate::types::{Alpha, AlphaVector, ArdState, TraceEntry};

fn io_err(path: &Path, source: std::io::Error) -> NardError {
    NardError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Load a matrix from comma-separated, headerless, row-major text.
/// Dimensions are inferred; ragged rows and non-numeric cells are reported
/// with their position.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_matrix(&text)
}

/// Parse matrix text; split out from `load_matrix` for testability.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (line_idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col_idx, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| NardError::Parse {
                line: line_idx + 1,
                column: Some(col_idx + 1),
                msg: format!("non-numeric cell {:?}", cell.trim()),
            })?;
            if !v.is_finite() {
                return Err(NardError::Parse {
                    line: line_idx + 1,
                    column: Some(col_idx + 1),
                    msg: format!("non-finite value {v}"),
                });
            }
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(NardError::Parse {
                    line: line_idx + 1,
                    column: None,
                    msg: format!("ragged row: expected {w} cells, found {}", row.len()),
                });
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(NardError::EmptyInput("matrix file contains no rows".into()));
    }
    let ncols = width.unwrap();
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Write a matrix in the same format `load_matrix` reads. Values use the
/// shortest representation that round-trips f64 exactly.
pub fn save_matrix(mat: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for i in 0..mat.nrows() {
        let row: Vec<String> = (0..mat.ncols())
            .map(|j| format_f64(mat[(i, j)]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Shortest decimal form that parses back to the identical f64.
fn format_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if s.parse::<f64>() != Ok(v) {
        s = format!("{v:e}");
    }
    s
}

/// Manifest written alongside every CLI output; carries enough to re-run
/// the command and reproduce the outputs with the same binary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full configuration as free-form JSON: fit, hyperpriors, kernel,
    /// glasso, and (for simulate) the synthesis spec.
    pub config: Value,
    pub input_paths: Vec<String>,
    pub output_paths: Vec<String>,
    pub timestamp: String,
    pub library_version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: Value) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            input_paths: Vec::new(),
            output_paths: Vec::new(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| io_err(path, e))
    }
}

/// Serialized model document. Pruned precisions are stored as the string
/// "inf" so the JSON stays valid; everything else is plain numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub alpha: Vec<Value>,
    pub active_indices: Vec<usize>,
    pub w: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub w_support: Vec<Vec<bool>>,
    pub omega_support: Vec<Vec<bool>>,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
    pub iters: usize,
    pub manifest: Option<RunManifest>,
}

fn matrix_to_rows(mat: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..mat.nrows())
        .map(|i| (0..mat.ncols()).map(|j| mat[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(NardError::Parse {
            line: 0,
            column: None,
            msg: "ragged matrix in model document".into(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ModelDocument {
    pub fn from_state(state: &ArdState, manifest: Option<RunManifest>) -> Self {
        let alpha = state
            .alpha
            .iter()
            .map(|a| match a {
                Alpha::Finite(v) => serde_json::json!(v),
                Alpha::Pruned => Value::String("inf".into()),
            })
            .collect();
        let w_support = (0..state.w.nrows())
            .map(|i| (0..state.w.ncols()).map(|j| state.w[(i, j)] != 0.0).collect())
            .collect();
        let omega_support = (0..state.omega.nrows())
            .map(|i| {
                (0..state.omega.ncols())
                    .map(|j| state.omega[(i, j)] != 0.0)
                    .collect()
            })
            .collect();
        ModelDocument {
            alpha,
            active_indices: state.alpha.active_indices(),
            w: matrix_to_rows(&state.w),
            omega: matrix_to_rows(&state.omega),
            w_support,
            omega_support,
            trace: state.trace.clone(),
            warnings: state.warnings.clone(),
            iters: state.iter,
            manifest,
        }
    }

    pub fn alpha_vector(&self) -> Result<AlphaVector> {
        let mut entries = Vec::with_capacity(self.alpha.len());
        for (i, v) in self.alpha.iter().enumerate() {
            match v {
                Value::String(s) if s == "inf" => entries.push(Alpha::Pruned),
                Value::Number(n) => {
                    let f = n.as_f64().ok_or_else(|| NardError::Parse {
                        line: 0,
                        column: Some(i + 1),
                        msg: "alpha entry out of f64 range".into(),
                    })?;
                    entries.push(Alpha::Finite(f));
                }
                other => {
                    return Err(NardError::Parse {
                        line: 0,
                        column: Some(i + 1),
                        msg: format!("invalid alpha entry {other}"),
                    })
                }
            }
        }
        AlphaVector::from_entries(entries)
    }

    pub fn w_matrix(&self) -> Result<DMatrix<f64>> {
        rows_to_matrix(&self.w)
    }

    pub fn omega_matrix(&self) -> Result<DMatrix<f64>> {
        rows_to_matrix(&self.omega)
    }
}

pub fn save_model(state: &ArdState, manifest: Option<RunManifest>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let doc = ModelDocument::from_state(state, manifest);
    let text = serde_json::to_string_pretty(&doc)?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelDocument> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
