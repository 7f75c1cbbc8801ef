//! Monte-Carlo studies: replicate loop, metrics and output files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::{generate, GenConfig, TruncationMode};
use crate::error::{Error, Result};
use crate::estimators::{full_mle, EstimateReport, Method};
use crate::harness::config::{CensorSpec, DataSource, Reference, SimConfig};
use crate::harness::io::ingest_csv;
use crate::likelihood::Dataset;
use crate::models::{ModelKind, ParamVector};
use crate::rng::{self, Stage};
use crate::uncertainty::confidence_interval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NotConverged,
    Failed,
    ReferenceFailed,
}

impl Status {
    fn tag(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::NotConverged => "not_converged",
            Status::Failed => "failed",
            Status::ReferenceFailed => "reference_failed",
        }
    }
}

/// One estimator on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub label: String,
    pub status: Status,
    pub error: Option<String>,
    pub theta: Option<Vec<f64>>,
    pub reference: Option<Vec<f64>>,
    pub ese: Option<Vec<f64>>,
    pub covered: Option<Vec<bool>>,
    pub alpha: f64,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub label: String,
    pub method: Method,
    pub r: usize,
    pub r0: usize,
    pub xi: f64,
    pub params: Vec<String>,
    /// Replicates that converged and entered the metrics.
    pub successes: usize,
    pub failures: usize,
    /// Successful replicates that also produced a covariance estimate.
    pub with_cov: usize,
    pub rmse: Vec<f64>,
    pub bias: Vec<f64>,
    /// Standard deviation of the errors across replicates.
    pub se: Vec<f64>,
    /// Mean estimated standard error.
    pub ese: Vec<f64>,
    pub cp: Vec<f64>,
    /// `sqrt(mean ||error||^2)`.
    pub rmse_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub model: ModelKind,
    pub true_params: Option<Vec<f64>>,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub reference: Reference,
    pub fix_dataset: bool,
    pub truncation_mode: Option<TruncationMode>,
    pub trunc_window: Option<(f64, f64)>,
    pub censor_window: Option<(f64, f64)>,
    pub target_alpha: Option<f64>,
    /// Mean censoring rate of the datasets used.
    pub mean_alpha: f64,
    pub level: f64,
    pub reference_failures: usize,
    pub estimators: Vec<EstimatorSummary>,
}

impl SimSummary {
    pub fn estimator(&self, label: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.label == label)
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub summary: SimSummary,
    pub replicates: Vec<ReplicateRecord>,
    pub record_time: bool,
}

enum Source {
    Fixed(Dataset),
    Fresh(GenConfig),
}

fn reference_for(config: &SimConfig, dataset: &Dataset) -> Result<ParamVector> {
    match config.reference {
        Reference::TrueTheta => Ok(config.true_params.expect("validated")),
        Reference::FullMle => {
            let optimizer = config.estimators[0].spec.optimizer;
            let rep = full_mle(dataset, config.model, &optimizer)?;
            if rep.converged {
                Ok(rep.theta_tilde)
            } else {
                Err(Error::DidNotConverge { iterations: rep.iterations, grad_norm: rep.grad_norm })
            }
        }
    }
}

fn record_estimate(
    config: &SimConfig,
    b: usize,
    label: &str,
    reference: &ParamVector,
    alpha: f64,
    outcome: Result<EstimateReport>,
    elapsed: f64,
) -> ReplicateRecord {
    let mut rec = ReplicateRecord {
        replicate: b,
        label: label.to_string(),
        status: Status::Failed,
        error: None,
        theta: None,
        reference: Some(reference.values().to_vec()),
        ese: None,
        covered: None,
        alpha,
        wall_time: elapsed,
    };
    match outcome {
        Err(e) => rec.error = Some(e.to_string()),
        Ok(rep) => {
            rec.theta = Some(rep.theta_tilde.values().to_vec());
            rec.status = if rep.converged { Status::Ok } else { Status::NotConverged };
            if let Some(cov) = &rep.cov {
                rec.ese = Some(cov.ese.clone());
                if let Ok(ci) = confidence_interval(&rep.theta_tilde, cov, config.level) {
                    rec.covered =
                        Some(ci.iter().zip(reference.values()).map(|((lo, hi), t)| lo <= t && t <= hi).collect());
                }
            }
        }
    }
    rec
}

fn run_replicate(config: &SimConfig, source: &Source, fixed_ref: Option<&Result<ParamVector>>, b: usize) -> Vec<ReplicateRecord> {
    let failed_all = |alpha: f64, status: Status, msg: String| -> Vec<ReplicateRecord> {
        config
            .estimators
            .iter()
            .map(|e| ReplicateRecord {
                replicate: b,
                label: e.label.clone(),
                status,
                error: Some(msg.clone()),
                theta: None,
                reference: None,
                ese: None,
                covered: None,
                alpha,
                wall_time: 0.0,
            })
            .collect()
    };
    let fresh;
    let dataset = match source {
        Source::Fixed(d) => d,
        Source::Fresh(gen) => {
            let cfg = GenConfig { seed: rng::derive_seed(config.seed, &[Stage::Data as u64, b as u64]), ..*gen };
            match generate(&cfg) {
                Ok(d) => {
                    fresh = d;
                    &fresh
                }
                Err(e) => return failed_all(f64::NAN, Status::Failed, format!("data generation: {e}")),
            }
        }
    };
    let alpha = dataset.alpha();
    let computed;
    let reference = match fixed_ref {
        Some(r) => r,
        None => {
            computed = reference_for(config, dataset);
            &computed
        }
    };
    let reference = match reference {
        Ok(r) => r,
        Err(e) => return failed_all(alpha, Status::ReferenceFailed, format!("reference: {e}")),
    };
    config
        .estimators
        .iter()
        .enumerate()
        .map(|(j, entry)| {
            let mut stream = rng::stream(config.seed, &[Stage::Estimator as u64, b as u64, j as u64]);
            let started = Instant::now();
            let outcome = entry.spec.run(dataset, config.model, &mut stream);
            record_estimate(config, b, &entry.label, reference, alpha, outcome, started.elapsed().as_secs_f64())
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = xs.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    if k == 0 {
        f64::NAN
    } else {
        s / k as f64
    }
}

fn summarize(config: &SimConfig, label: &str, records: &[&ReplicateRecord]) -> EstimatorSummary {
    let entry = config.estimators.iter().find(|e| e.label == label).expect("known label");
    let d = config.model.dim();
    let ok: Vec<&&ReplicateRecord> = records.iter().filter(|r| r.status == Status::Ok).collect();
    let errors: Vec<Vec<f64>> = ok
        .iter()
        .map(|r| {
            let th = r.theta.as_ref().expect("ok record has theta");
            let rf = r.reference.as_ref().expect("ok record has reference");
            th.iter().zip(rf).map(|(a, b)| a - b).collect()
        })
        .collect();
    let bias: Vec<f64> = (0..d).map(|k| mean(errors.iter().map(|e| e[k]))).collect();
    let rmse: Vec<f64> = (0..d).map(|k| mean(errors.iter().map(|e| e[k] * e[k])).sqrt()).collect();
    let se: Vec<f64> = (0..d).map(|k| mean(errors.iter().map(|e| (e[k] - bias[k]).powi(2))).sqrt()).collect();
    let rmse_total = mean(errors.iter().map(|e| e.iter().map(|x| x * x).sum::<f64>())).sqrt();
    let with_cov: Vec<&&ReplicateRecord> = ok.iter().copied().filter(|r| r.ese.is_some()).collect();
    let ese = (0..d).map(|k| mean(with_cov.iter().map(|r| r.ese.as_ref().unwrap()[k]))).collect();
    let cp = (0..d)
        .map(|k| {
            mean(with_cov.iter().filter_map(|r| r.covered.as_ref()).map(|c| if c[k] { 1.0 } else { 0.0 }))
        })
        .collect();
    EstimatorSummary {
        label: label.to_string(),
        method: entry.spec.method,
        r: entry.spec.r,
        r0: entry.spec.r0,
        xi: entry.spec.xi,
        params: config.model.param_names().iter().map(|s| s.to_string()).collect(),
        successes: ok.len(),
        failures: records.len() - ok.len(),
        with_cov: with_cov.len(),
        rmse,
        bias,
        se,
        ese,
        cp,
        rmse_total,
        mean_time: config.record_time.then(|| mean(records.iter().map(|r| r.wall_time))),
    }
}

fn run_inner(config: &SimConfig) -> Result<SimResult> {
    let probe_seed = rng::derive_seed(config.seed, &[Stage::Probe as u64]);
    let (source, gen_cfg, target_alpha) = match &config.source {
        DataSource::File { path, time_scale } => (Source::Fixed(ingest_csv(path, *time_scale)?), None, None),
        DataSource::Generate(spec) => {
            let gen = spec.resolve(probe_seed)?;
            let target = match spec.censor {
                CensorSpec::TargetAlpha(a) => Some(a),
                CensorSpec::Window(..) => None,
            };
            let source = if config.fix_dataset {
                let cfg = GenConfig { seed: rng::derive_seed(config.seed, &[Stage::Data as u64]), ..gen };
                Source::Fixed(generate(&cfg)?)
            } else {
                Source::Fresh(gen)
            };
            (source, Some(gen), target)
        }
    };
    let fixed_ref = match &source {
        Source::Fixed(d) => Some(reference_for(config, d)),
        Source::Fresh(_) => None,
    };
    let n = match &source {
        Source::Fixed(d) => d.n(),
        Source::Fresh(g) => g.n,
    };

    let per_rep: Vec<Vec<ReplicateRecord>> =
        (0..config.m).into_par_iter().map(|b| run_replicate(config, &source, fixed_ref.as_ref(), b)).collect();
    let replicates: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();

    let estimators = config
        .estimators
        .iter()
        .map(|e| {
            let recs: Vec<&ReplicateRecord> = replicates.iter().filter(|r| r.label == e.label).collect();
            summarize(config, &e.label, &recs)
        })
        .collect();
    let k = config.estimators.len();
    let reference_failures = replicates.iter().step_by(k).filter(|r| r.status == Status::ReferenceFailed).count();
    let mean_alpha = mean(replicates.iter().step_by(k).map(|r| r.alpha).filter(|a| a.is_finite()));
    let summary = SimSummary {
        model: config.model,
        true_params: config.true_params.map(|p| p.values().to_vec()),
        n,
        m: config.m,
        seed: config.seed,
        reference: config.reference,
        fix_dataset: config.fix_dataset,
        truncation_mode: gen_cfg.map(|g| g.truncation_mode),
        trunc_window: gen_cfg.map(|g| g.trunc_window),
        censor_window: gen_cfg.map(|g| g.censor_window),
        target_alpha,
        mean_alpha,
        level: config.level,
        reference_failures,
        estimators,
    };
    Ok(SimResult { summary, replicates, record_time: config.record_time })
}

/// Runs a study on a pool of `config.workers` threads. Results do not depend
/// on the number of workers.
pub fn run_simulation(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(config))
}

fn opt(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

/// Long-format table: one row per estimator and parameter.
pub fn summary_csv(summary: &SimSummary) -> String {
    let timed = summary.estimators.iter().any(|e| e.mean_time.is_some());
    let mut out = String::from("estimator,method,r,r0,parameter,rmse,bias,se,ese,cp,rmse_total,successes,failures");
    if timed {
        out.push_str(",mean_time");
    }
    out.push('\n');
    for e in &summary.estimators {
        for (k, p) in e.params.iter().enumerate() {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.label,
                e.method,
                e.r,
                e.r0,
                p,
                opt(e.rmse[k]),
                opt(e.bias[k]),
                opt(e.se[k]),
                opt(e.ese[k]),
                opt(e.cp[k]),
                opt(e.rmse_total),
                e.successes,
                e.failures
            );
            if timed {
                let _ = write!(out, ",{}", e.mean_time.map(opt).unwrap_or_default());
            }
            out.push('\n');
        }
    }
    out
}

/// One row per replicate and estimator.
pub fn replicates_csv(result: &SimResult) -> String {
    let names = result.summary.model.param_names();
    let mut out = String::from("replicate,estimator,status,alpha");
    for prefix in ["est", "ref", "ese", "covered"] {
        for p in names {
            let _ = write!(out, ",{prefix}_{p}");
        }
    }
    if result.record_time {
        out.push_str(",wall_time");
    }
    out.push_str(",error\n");
    let d = names.len();
    let fmt_vec = |v: &Option<Vec<f64>>| -> Vec<String> {
        match v {
            Some(v) => v.iter().map(|x| opt(*x)).collect(),
            None => vec![String::new(); d],
        }
    };
    for r in &result.replicates {
        let _ = write!(out, "{},{},{},{}", r.replicate, r.label, r.status.tag(), opt(r.alpha));
        let covered = match &r.covered {
            Some(c) => c.iter().map(|b| u8::from(*b).to_string()).collect(),
            None => vec![String::new(); d],
        };
        for col in [fmt_vec(&r.theta), fmt_vec(&r.reference), fmt_vec(&r.ese), covered] {
            for c in col {
                let _ = write!(out, ",{c}");
            }
        }
        if result.record_time {
            let _ = write!(out, ",{}", r.wall_time);
        }
        let err = r.error.as_deref().unwrap_or("").replace(['"', ','], ";");
        let _ = writeln!(out, ",{err}");
    }
    out
}

/// Writes `summary.json`, `summary.csv` and `replicates.csv` into `dir`.
pub fn write_outputs(result: &SimResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(&result.summary)?;
    json.push('\n');
    fs::write(dir.join("summary.json"), json)?;
    fs::write(dir.join("summary.csv"), summary_csv(&result.summary))?;
    fs::write(dir.join("replicates.csv"), replicates_csv(result))?;
    Ok(())
}
