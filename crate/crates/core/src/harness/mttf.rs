//! Mean time to failure of a fitted model, in the units of the input data.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{EstimateReport, Method};
use crate::models::{self, ModelKind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MttfReport {
    pub model: ModelKind,
    pub method: Method,
    pub theta: Vec<f64>,
    /// In the original time units.
    pub mttf: f64,
    /// Factor the input times were multiplied by before fitting.
    pub time_scale: f64,
    pub seed: u64,
}

/// Requires a converged fit. The model's MTTF is divided by `time_scale`
/// to undo the scaling applied on ingest.
pub fn mttf_report(report: &EstimateReport, seed: u64, time_scale: f64) -> Result<MttfReport> {
    if !report.converged {
        return Err(Error::DidNotConverge { iterations: report.iterations, grad_norm: report.grad_norm });
    }
    if !(time_scale > 0.0 && time_scale.is_finite()) {
        return Err(Error::InvalidConfig(format!("time scale must be positive, got {time_scale}")));
    }
    let theta = &report.theta_tilde;
    Ok(MttfReport {
        model: theta.model(),
        method: report.method,
        theta: theta.values().to_vec(),
        mttf: models::mttf(theta)? / time_scale,
        time_scale,
        seed,
    })
}
