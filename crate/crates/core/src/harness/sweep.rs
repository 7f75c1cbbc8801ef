//! Repeats a study across target censoring rates.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::{CensorSpec, DataSource, SimConfig};
use crate::harness::sim::{run_simulation, SimSummary};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub summary: Option<SimSummary>,
    /// Why the point could not be run (e.g. calibration failed).
    pub error: Option<String>,
}

/// Runs `base` once per target rate, with the same seed at every point.
/// A failing point is recorded and the sweep continues.
pub fn sweep_censoring(base: &SimConfig, alphas: &[f64]) -> Result<Vec<SweepPoint>> {
    let DataSource::Generate(spec) = &base.source else {
        return Err(Error::InvalidConfig("a censoring sweep needs generated data".into()));
    };
    if alphas.is_empty() {
        return Err(Error::InvalidConfig("no censoring rates given".into()));
    }
    base.validate()?;
    let mut points = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut cfg = base.clone();
        let mut s = *spec;
        s.censor = CensorSpec::TargetAlpha(alpha);
        cfg.source = DataSource::Generate(s);
        let point = match run_simulation(&cfg) {
            Ok(res) => SweepPoint { alpha, summary: Some(res.summary), error: None },
            Err(e) => SweepPoint { alpha, summary: None, error: Some(e.to_string()) },
        };
        points.push(point);
    }
    Ok(points)
}

fn cell(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

/// Long format: one row per rate, estimator and parameter. Failed points get
/// a single row with the error.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(
        "alpha,mean_alpha,estimator,parameter,rmse,bias,se,ese,cp,rmse_total,successes,failures,error\n",
    );
    for p in points {
        match &p.summary {
            None => {
                let err = p.error.as_deref().unwrap_or("").replace(['"', ','], ";");
                let _ = writeln!(out, "{},,,,,,,,,,,,{err}", p.alpha);
            }
            Some(s) => {
                for e in &s.estimators {
                    for (k, name) in e.params.iter().enumerate() {
                        let _ = writeln!(
                            out,
                            "{},{},{},{},{},{},{},{},{},{},{},{},",
                            p.alpha,
                            cell(s.mean_alpha),
                            e.label,
                            name,
                            cell(e.rmse[k]),
                            cell(e.bias[k]),
                            cell(e.se[k]),
                            cell(e.ese[k]),
                            cell(e.cp[k]),
                            cell(e.rmse_total),
                            e.successes,
                            e.failures
                        );
                    }
                }
            }
        }
    }
    out
}
