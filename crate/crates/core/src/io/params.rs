//! Fitted-parameter JSON: structured params, the flattened vector with its
//! names, and optional fit diagnostics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result};
use crate::fitting::{Branch, FitResult};
use crate::model::ModelParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reprojection_rmse: f64,
    pub cost_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_trace: Option<Vec<Branch>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl FitDiagnostics {
    pub fn from_fit(fit: &FitResult, reprojection_rmse: f64, meta: bool) -> Self {
        Self {
            final_cost: fit.final_cost,
            iterations: fit.iterations,
            converged: fit.converged,
            reprojection_rmse,
            cost_trace: fit.cost_trace.clone(),
            branch_trace: meta.then(|| fit.branch_trace.clone()),
            message: fit.diagnostic.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsDocument {
    pub params: ModelParams,
    /// `[f, pitch, yaw, roll, t_x, t_y, id..., exp...]`.
    pub flat: Vec<f64>,
    pub flat_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<FitDiagnostics>,
}

impl ParamsDocument {
    pub fn new(params: ModelParams, diagnostics: Option<FitDiagnostics>) -> Self {
        Self {
            flat: params.to_flat(),
            flat_names: ModelParams::flat_names(params.id_coeffs.len(), params.exp_coeffs.len()),
            params,
            diagnostics,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("params always serialize");
        s.push('\n');
        s
    }
}

/// Accepts a full [`ParamsDocument`] or a bare [`ModelParams`] object.
pub fn decode_params(text: &str) -> Result<ModelParams, FormatError> {
    if let Ok(doc) = serde_json::from_str::<ParamsDocument>(text) {
        return Ok(doc.params);
    }
    serde_json::from_str::<ModelParams>(text).map_err(|e| FormatError::Schema(e.to_string()))
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let bytes = super::read_file(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| FormatError::Schema("params file is not UTF-8".into()))?;
    Ok(decode_params(text)?)
}

pub fn save_params(doc: &ParamsDocument, path: &Path) -> Result<()> {
    super::atomic_write(path, doc.to_json().as_bytes())
}
