//! End-to-end estimators: full-data MLE, uniform subsampling, RDS and RDCS.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{Dataset, FullObjective, SubsampleObjective, WeightedDraw};
use crate::models::{ModelKind, ParamVector};
use crate::optimizer::{maximize, Evaluation, Objective, OptimResult, OptimizerConfig};
use crate::rng::StreamRng;
use crate::subsampling::{self, censoring_subsample, draw_with_replacement, mix_probs};
use crate::uncertainty::{var_rdcs, var_rds, CovReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Full,
    Uniform,
    Rds,
    Rdcs,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::Uniform => "uniform",
            Method::Rds => "rds",
            Method::Rdcs => "rdcs",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Method::Full),
            "uniform" | "unif" => Ok(Method::Uniform),
            "rds" => Ok(Method::Rds),
            "rdcs" => Ok(Method::Rdcs),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

/// Estimator settings. `r`, `r0` and `xi` are ignored where they do not apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub method: Method,
    pub r: usize,
    pub r0: usize,
    pub xi: f64,
    pub optimizer: OptimizerConfig,
    /// Keep the `gamma = r/n` terms of the subsample covariance estimate.
    pub include_gamma: bool,
}

impl EstimatorSpec {
    pub fn new(method: Method, r: usize, r0: usize) -> Self {
        EstimatorSpec { method, r, r0, xi: 0.1, optimizer: OptimizerConfig::default(), include_gamma: true }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.method == Method::Full {
            return Ok(());
        }
        if self.r == 0 {
            return Err(Error::InvalidConfig("subsample size r must be positive".into()));
        }
        if matches!(self.method, Method::Rds | Method::Rdcs) {
            if self.r0 == 0 || self.r0 >= self.r {
                return Err(Error::InvalidConfig(format!(
                    "pilot size must satisfy 0 < r0 < r (r0 = {}, r = {})",
                    self.r0, self.r
                )));
            }
            if !(0.0..=1.0).contains(&self.xi) {
                return Err(Error::InvalidConfig(format!("xi must lie in [0, 1], got {}", self.xi)));
            }
        }
        Ok(())
    }

    /// Runs the estimator; all randomness comes from `rng`.
    pub fn run(&self, dataset: &Dataset, model: ModelKind, rng: &mut StreamRng) -> Result<EstimateReport> {
        self.validate()?;
        match self.method {
            Method::Full => full_mle(dataset, model, &self.optimizer),
            Method::Uniform => uniform_estimate(dataset, model, self.r, &self.optimizer, self.include_gamma, rng),
            Method::Rds => {
                rds_estimate(dataset, model, self.r, self.r0, self.xi, &self.optimizer, self.include_gamma, rng)
            }
            Method::Rdcs => {
                rdcs_estimate(dataset, model, self.r, self.r0, self.xi, &self.optimizer, self.include_gamma, rng)
            }
        }
    }
}

/// Units consumed at each stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawCounts {
    pub pilot: usize,
    /// Units included with certainty (uncensored units under RDCS).
    pub fixed: usize,
    pub sampled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub method: Method,
    pub theta_tilde: ParamVector,
    pub cov: Option<CovReport>,
    pub pilot_theta: Option<ParamVector>,
    pub draws_used: DrawCounts,
    /// Seconds.
    pub wall_time: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// An objective divided by a positive constant; used so that the gradient
/// tolerance means the same for objectives on very different scales.
struct Scaled<'a> {
    inner: &'a dyn Objective,
    scale: f64,
}

impl Objective for Scaled<'_> {
    fn value(&self, p: &ParamVector) -> Result<f64> {
        Ok(self.inner.value(p)? / self.scale)
    }

    fn evaluate(&self, p: &ParamVector) -> Result<Evaluation> {
        let ev = self.inner.evaluate(p)?;
        Ok(Evaluation { value: ev.value / self.scale, gradient: ev.gradient / self.scale, hessian: ev.hessian / self.scale })
    }
}

fn fit_subsample(objective: &SubsampleObjective<'_>, start: ParamVector, config: &OptimizerConfig) -> Result<OptimResult> {
    let scaled = Scaled { inner: objective, scale: objective.total_weight() };
    maximize(&scaled, start, config)
}

fn report(method: Method, fit: OptimResult, started: Instant) -> EstimateReport {
    EstimateReport {
        method,
        theta_tilde: fit.theta_hat,
        cov: None,
        pilot_theta: None,
        draws_used: DrawCounts::default(),
        wall_time: started.elapsed().as_secs_f64(),
        converged: fit.converged,
        iterations: fit.iterations,
        grad_norm: fit.final_grad_norm,
    }
}

/// Maximizer of the full-data log-likelihood, started from all ones.
pub fn full_mle(dataset: &Dataset, model: ModelKind, config: &OptimizerConfig) -> Result<EstimateReport> {
    let started = Instant::now();
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.n0() == 0 {
        return Err(Error::NoUncensoredData);
    }
    let fit = maximize(&FullObjective { dataset }, ParamVector::ones(model), config)?;
    Ok(report(Method::Full, fit, started))
}

fn has_uncensored(dataset: &Dataset, draws: &[WeightedDraw]) -> bool {
    draws.iter().any(|d| !dataset.get(d.index).censored())
}

/// Uniform with-replacement subsample of size `r`, inverse-probability weighted.
pub fn uniform_estimate(
    dataset: &Dataset,
    model: ModelKind,
    r: usize,
    config: &OptimizerConfig,
    include_gamma: bool,
    rng: &mut StreamRng,
) -> Result<EstimateReport> {
    let started = Instant::now();
    let probs = subsampling::uniform_probs(dataset)?;
    let draws = draw_with_replacement(&probs, r, rng)?;
    if !has_uncensored(dataset, &draws) {
        return Err(Error::NoUncensoredDraws);
    }
    let objective = SubsampleObjective::general(dataset, &draws)?;
    let fit = fit_subsample(&objective, ParamVector::ones(model), config)?;
    let mut rep = report(Method::Uniform, fit, started);
    rep.cov = var_rds(&draws, dataset, &rep.theta_tilde, dataset.n(), r, include_gamma).ok();
    rep.draws_used.sampled = r;
    rep.wall_time = started.elapsed().as_secs_f64();
    Ok(rep)
}

/// Unweighted MLE on the given units; `None` when the subsample is unusable.
fn pilot_fit(dataset: &Dataset, model: ModelKind, indices: &[usize], config: &OptimizerConfig) -> Option<ParamVector> {
    if !indices.iter().any(|&i| !dataset.get(i).censored()) {
        return None;
    }
    let objective = SubsampleObjective::unweighted(dataset, indices).ok()?;
    let fit = maximize(&objective, ParamVector::ones(model), config).ok()?;
    fit.converged.then_some(fit.theta_hat)
}

/// Uniform pilot over all units, retried once with twice the size.
fn uniform_pilot(
    dataset: &Dataset,
    model: ModelKind,
    r0: usize,
    config: &OptimizerConfig,
    rng: &mut StreamRng,
) -> Result<(ParamVector, usize)> {
    let probs = subsampling::uniform_probs(dataset)?;
    let mut used = 0;
    for size in [r0, 2 * r0] {
        let draws = draw_with_replacement(&probs, size, rng)?;
        used += size;
        let indices: Vec<usize> = draws.iter().map(|d| d.index).collect();
        if let Some(theta) = pilot_fit(dataset, model, &indices, config) {
            return Ok((theta, used));
        }
    }
    Err(Error::PilotFailed(format!("no usable uniform pilot with r0 = {r0} or {}", 2 * r0)))
}

/// Two-stage RDS: uniform pilot, score-norm probabilities mixed with uniform,
/// weighted fit on `r` draws started at the pilot estimate.
#[allow(clippy::too_many_arguments)]
pub fn rds_estimate(
    dataset: &Dataset,
    model: ModelKind,
    r: usize,
    r0: usize,
    xi: f64,
    config: &OptimizerConfig,
    include_gamma: bool,
    rng: &mut StreamRng,
) -> Result<EstimateReport> {
    let started = Instant::now();
    if r0 == 0 || r0 >= r {
        return Err(Error::InvalidConfig(format!("pilot size must satisfy 0 < r0 < r (r0 = {r0}, r = {r})")));
    }
    let (pilot, pilot_used) = uniform_pilot(dataset, model, r0, config, rng)?;
    let probs = mix_probs(&subsampling::rds_probs(dataset, &pilot)?, xi)?;
    let draws = draw_with_replacement(&probs, r, rng)?;
    if !has_uncensored(dataset, &draws) {
        return Err(Error::NoUncensoredDraws);
    }
    let objective = SubsampleObjective::general(dataset, &draws)?;
    let fit = fit_subsample(&objective, pilot, config)?;
    let mut rep = report(Method::Rds, fit, started);
    rep.cov = var_rds(&draws, dataset, &rep.theta_tilde, dataset.n(), r, include_gamma).ok();
    rep.pilot_theta = Some(pilot);
    rep.draws_used = DrawCounts { pilot: pilot_used, fixed: 0, sampled: r };
    rep.wall_time = started.elapsed().as_secs_f64();
    Ok(rep)
}

/// Pilot for the censoring estimator: every uncensored unit plus `r0` uniform
/// draws among censored units, fitted with the censoring weights. Retried
/// once with `2 r0` censored draws.
fn censoring_pilot(
    dataset: &Dataset,
    model: ModelKind,
    r0: usize,
    config: &OptimizerConfig,
    rng: &mut StreamRng,
) -> Result<(ParamVector, usize)> {
    let probs = subsampling::uniform_censored_probs(dataset)?;
    let n0 = dataset.n0();
    let mut used = 0;
    for size in [r0, 2 * r0] {
        let draws = censoring_subsample(dataset, &probs, n0 + size, rng)?;
        used += size;
        let fit = SubsampleObjective::censoring(dataset, &draws)
            .and_then(|obj| fit_subsample(&obj, ParamVector::ones(model), config));
        if let Ok(fit) = fit {
            if fit.converged {
                return Ok((fit.theta_hat, n0 + used));
            }
        }
    }
    Err(Error::PilotFailed(format!("censoring pilot did not converge with r0 = {r0} or {}", 2 * r0)))
}

/// Two-stage RDCS: keep all uncensored units, draw `r - n0` censored units with
/// survival-gradient probabilities mixed with uniform, and fit the censoring
/// objective. The exponential model needs no pilot because its probabilities
/// `∝ t - t_trunc` do not depend on the parameter.
#[allow(clippy::too_many_arguments)]
pub fn rdcs_estimate(
    dataset: &Dataset,
    model: ModelKind,
    r: usize,
    r0: usize,
    xi_c: f64,
    config: &OptimizerConfig,
    include_gamma: bool,
    rng: &mut StreamRng,
) -> Result<EstimateReport> {
    let started = Instant::now();
    if dataset.n1() == 0 {
        return Err(Error::NoCensoredUnits);
    }
    let n0 = dataset.n0();
    if r <= n0 {
        return Err(Error::SubsampleTooSmall { r, n0 });
    }
    if n0 == 0 {
        return Err(Error::NoUncensoredData);
    }
    let (pilot, pilot_used) = match model {
        ModelKind::Exponential => (None, 0),
        _ => {
            let (theta, used) = censoring_pilot(dataset, model, r0, config, rng)?;
            (Some(theta), used)
        }
    };
    let at = pilot.unwrap_or_else(|| ParamVector::ones(model));
    let probs = mix_probs(&subsampling::rdcs_probs(dataset, &at)?, xi_c)?;
    let draws = censoring_subsample(dataset, &probs, r, rng)?;
    let objective = SubsampleObjective::censoring(dataset, &draws)?;
    let fit = fit_subsample(&objective, at, config)?;
    let mut rep = report(Method::Rdcs, fit, started);
    rep.cov = var_rdcs(&draws, dataset, &rep.theta_tilde, dataset.n(), n0, r, include_gamma).ok();
    rep.pilot_theta = pilot;
    rep.draws_used = DrawCounts { pilot: pilot_used, fixed: n0, sampled: r - n0 };
    rep.wall_time = started.elapsed().as_secs_f64();
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::Observation;
    use crate::rng;
    use approx::assert_relative_eq;

    fn obs(t: f64, c: bool, tl: f64) -> Observation {
        Observation::new(t, c, tl).unwrap()
    }

    #[test]
    fn full_mle_closed_forms() {
        let cfg = OptimizerConfig::default();
        let d = Dataset::new(vec![obs(1.0, false, 0.0), obs(2.0, false, 0.0), obs(3.0, true, 0.0)]);
        let rep = full_mle(&d, ModelKind::Exponential, &cfg).unwrap();
        assert!(rep.converged);
        assert_relative_eq!(rep.theta_tilde.values()[0], 1.0 / 3.0, max_relative = 1e-12);
        let single = Dataset::new(vec![obs(1.0, false, 0.0)]);
        assert_relative_eq!(full_mle(&single, ModelKind::Exponential, &cfg).unwrap().theta_tilde.values()[0], 1.0);
        let censored = Dataset::new(vec![obs(1.0, true, 0.0)]);
        assert!(matches!(full_mle(&censored, ModelKind::Exponential, &cfg), Err(Error::NoUncensoredData)));
    }

    #[test]
    fn uniform_on_repeated_observation_matches_full() {
        let cfg = OptimizerConfig::default();
        let d = Dataset::new(vec![obs(2.5, false, 0.5); 10]);
        let full = full_mle(&d, ModelKind::Exponential, &cfg).unwrap();
        let mut r = rng::stream(1, &[]);
        let unif = uniform_estimate(&d, ModelKind::Exponential, 10, &cfg, true, &mut r).unwrap();
        assert_relative_eq!(unif.theta_tilde.values()[0], full.theta_tilde.values()[0], max_relative = 1e-12);
    }

    #[test]
    fn rdcs_bookkeeping() {
        let mut units = vec![obs(0.5, false, 0.0); 5];
        units.extend((0..50).map(|i| obs(1.0 + i as f64 * 0.1, true, 0.2)));
        let d = Dataset::new(units);
        let mut r = rng::stream(2, &[]);
        let rep = rdcs_estimate(&d, ModelKind::Exponential, 20, 10, 0.1, &OptimizerConfig::default(), true, &mut r)
            .unwrap();
        assert_eq!(rep.draws_used, DrawCounts { pilot: 0, fixed: 5, sampled: 15 });
        assert!(rep.pilot_theta.is_none());
        let no_cens = Dataset::new(vec![obs(0.5, false, 0.0); 5]);
        assert!(matches!(
            rdcs_estimate(&no_cens, ModelKind::Exponential, 20, 10, 0.1, &OptimizerConfig::default(), true, &mut r),
            Err(Error::NoCensoredUnits)
        ));
        assert!(matches!(
            rdcs_estimate(&d, ModelKind::Exponential, 5, 2, 0.1, &OptimizerConfig::default(), true, &mut r),
            Err(Error::SubsampleTooSmall { r: 5, n0: 5 })
        ));
    }

    #[test]
    fn spec_validation() {
        let mut s = EstimatorSpec::new(Method::Rds, 100, 100);
        assert!(s.validate().is_err());
        s.r0 = 40;
        assert!(s.validate().is_ok());
        s.xi = 2.0;
        assert!(s.validate().is_err());
        assert_eq!("RDCS".parse::<Method>().unwrap(), Method::Rdcs);
    }
}
