//! Censored, left-truncated log-likelihood contributions and the full-data,
//! general-subsample and censoring-subsample objectives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{self, Jet, ModelKind, ParamVector};
use crate::optimizer::{Evaluation, Objective};
use crate::reduce::tree_reduce;

/// One unit: observed time, censoring flag and left-truncation age.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    t: f64,
    censored: bool,
    t_trunc: f64,
}

impl Observation {
    pub fn new(t: f64, censored: bool, t_trunc: f64) -> Result<Self> {
        if !(t.is_finite() && t_trunc.is_finite()) {
            return Err(Error::InvalidObservation(format!("non-finite time (t = {t}, t_trunc = {t_trunc})")));
        }
        if t_trunc < 0.0 {
            return Err(Error::InvalidObservation(format!("t_trunc = {t_trunc} is negative")));
        }
        if t < t_trunc {
            return Err(Error::InvalidObservation(format!("t = {t} is below t_trunc = {t_trunc}")));
        }
        Ok(Observation { t, censored, t_trunc })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn censored(&self) -> bool {
        self.censored
    }

    pub fn t_trunc(&self) -> f64 {
        self.t_trunc
    }
}

/// Immutable collection of observations with cached counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    censored_idx: Vec<usize>,
    uncensored_idx: Vec<usize>,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>) -> Self {
        let (censored_idx, uncensored_idx) =
            (0..observations.len()).partition(|&i| observations[i].censored);
        Dataset { observations, censored_idx, uncensored_idx }
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn get(&self, i: usize) -> &Observation {
        &self.observations[i]
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    /// Number of uncensored (failure) observations.
    pub fn n0(&self) -> usize {
        self.uncensored_idx.len()
    }

    /// Number of censored observations.
    pub fn n1(&self) -> usize {
        self.censored_idx.len()
    }

    pub fn alpha(&self) -> f64 {
        if self.observations.is_empty() {
            0.0
        } else {
            self.n1() as f64 / self.n() as f64
        }
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn censored_indices(&self) -> &[usize] {
        &self.censored_idx
    }

    pub fn uncensored_indices(&self) -> &[usize] {
        &self.uncensored_idx
    }
}

impl FromIterator<Observation> for Dataset {
    fn from_iter<I: IntoIterator<Item = Observation>>(iter: I) -> Self {
        Dataset::new(iter.into_iter().collect())
    }
}

/// A drawn subsample unit with its draw probability and objective weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedDraw {
    pub index: usize,
    pub prob: f64,
    pub weight: f64,
}

impl WeightedDraw {
    /// General subsampling: weight `1 / (r * prob)`.
    pub fn general(index: usize, prob: f64, r: usize) -> Self {
        WeightedDraw { index, prob, weight: 1.0 / (r as f64 * prob) }
    }

    /// A censored draw in a censoring subsample: weight `1 / ((r - n0) * prob)`.
    pub fn censored(index: usize, prob: f64, r: usize, n0: usize) -> Self {
        WeightedDraw { index, prob, weight: 1.0 / ((r - n0) as f64 * prob) }
    }

    /// An uncensored unit kept with certainty: probability and weight 1.
    pub fn uncensored(index: usize) -> Self {
        WeightedDraw { index, prob: 1.0, weight: 1.0 }
    }
}

pub(crate) fn obs_jet(params: &ParamVector, obs: &Observation) -> Result<Jet> {
    let mut jet = if obs.censored {
        models::log_survival_jet(params, obs.t)?
    } else {
        models::log_pdf_jet(params, obs.t)?
    };
    if obs.t_trunc > 0.0 {
        let trunc = models::log_survival_jet(params, obs.t_trunc)?;
        jet.add_scaled(&trunc, -1.0, params.dim());
    }
    Ok(jet)
}

fn checked_jet(params: &ParamVector, obs: &Observation) -> Result<Jet> {
    let jet = obs_jet(params, obs)?;
    if jet.is_finite(params.dim()) {
        Ok(jet)
    } else {
        Err(Error::NonFiniteValue(format!(
            "log-likelihood derivatives at t = {}, t_trunc = {}",
            obs.t, obs.t_trunc
        )))
    }
}

/// Log-likelihood contribution `(1-C) log f(t) + C log S(t) - log S(t_trunc)`.
pub fn obs_loglik(params: &ParamVector, obs: &Observation) -> Result<f64> {
    obs_jet(params, obs).map(|j| j.value)
}

pub fn obs_score(params: &ParamVector, obs: &Observation) -> Result<DVector<f64>> {
    checked_jet(params, obs).map(|j| j.gradient(params.dim()))
}

pub fn obs_hessian(params: &ParamVector, obs: &Observation) -> Result<DMatrix<f64>> {
    checked_jet(params, obs).map(|j| j.hessian(params.dim()))
}

fn to_evaluation(jet: &Jet, dim: usize) -> Evaluation {
    Evaluation { value: jet.value, gradient: jet.gradient(dim), hessian: jet.hessian(dim) }
}

/// Weighted sum `sum_k w_k l(x_{idx_k})` over a list of terms, reduced pairwise.
fn weighted_jet(params: &ParamVector, dataset: &Dataset, terms: &[(usize, f64)]) -> Result<Jet> {
    let dim = params.dim();
    let leaf = |lo: usize, hi: usize| -> Result<Jet> {
        let mut acc = Jet::ZERO;
        for &(i, w) in &terms[lo..hi] {
            acc.add_scaled(&checked_jet(params, &dataset.observations[i])?, w, dim);
        }
        Ok(acc)
    };
    let merge = |a: Result<Jet>, b: Result<Jet>| -> Result<Jet> {
        let mut a = a?;
        a.add_scaled(&b?, 1.0, dim);
        Ok(a)
    };
    tree_reduce(terms.len(), &leaf, &merge)
}

fn weighted_value(params: &ParamVector, dataset: &Dataset, terms: &[(usize, f64)]) -> Result<f64> {
    let leaf = |lo: usize, hi: usize| -> Result<f64> {
        let mut acc = 0.0;
        for &(i, w) in &terms[lo..hi] {
            acc += w * obs_loglik(params, &dataset.observations[i])?;
        }
        Ok(acc)
    };
    tree_reduce(terms.len(), &leaf, &|a: Result<f64>, b: Result<f64>| Ok(a? + b?))
}

fn full_jet(params: &ParamVector, dataset: &Dataset) -> Result<Jet> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = params.dim();
    let obs = &dataset.observations;
    let leaf = |lo: usize, hi: usize| -> Result<Jet> {
        let mut acc = Jet::ZERO;
        for o in &obs[lo..hi] {
            acc.add_scaled(&checked_jet(params, o)?, 1.0, dim);
        }
        Ok(acc)
    };
    let merge = |a: Result<Jet>, b: Result<Jet>| -> Result<Jet> {
        let mut a = a?;
        a.add_scaled(&b?, 1.0, dim);
        Ok(a)
    };
    let sum = tree_reduce(obs.len(), &leaf, &merge)?;
    let mut mean = Jet::ZERO;
    mean.add_scaled(&sum, 1.0 / obs.len() as f64, dim);
    Ok(mean)
}

/// Mean log-likelihood over the full dataset.
pub fn full_loglik(params: &ParamVector, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let obs = &dataset.observations;
    let leaf = |lo: usize, hi: usize| -> Result<f64> {
        let mut acc = 0.0;
        for o in &obs[lo..hi] {
            acc += obs_loglik(params, o)?;
        }
        Ok(acc)
    };
    let sum = tree_reduce(obs.len(), &leaf, &|a: Result<f64>, b: Result<f64>| Ok(a? + b?))?;
    Ok(sum / obs.len() as f64)
}

/// Mean log-likelihood with its gradient and Hessian.
pub fn full_loglik_eval(params: &ParamVector, dataset: &Dataset) -> Result<Evaluation> {
    full_jet(params, dataset).map(|j| to_evaluation(&j, params.dim()))
}

fn check_probs(draws: &[WeightedDraw]) -> Result<()> {
    match draws.iter().find(|d| !(d.prob > 0.0 && d.prob <= 1.0)) {
        Some(d) => Err(Error::ZeroProbabilityDraw { index: d.index, prob: d.prob }),
        None => Ok(()),
    }
}

fn check_indices(draws: &[WeightedDraw], dataset: &Dataset) -> Result<()> {
    match draws.iter().find(|d| d.index >= dataset.n()) {
        Some(d) => Err(Error::InvalidConfig(format!("draw index {} out of range (n = {})", d.index, dataset.n()))),
        None => Ok(()),
    }
}

fn general_terms(draws: &[WeightedDraw], dataset: &Dataset) -> Result<Vec<(usize, f64)>> {
    if draws.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_probs(draws)?;
    check_indices(draws, dataset)?;
    let r = draws.len() as f64;
    Ok(draws.iter().map(|d| (d.index, 1.0 / (r * d.prob))).collect())
}

fn censoring_terms(draws: &[WeightedDraw], dataset: &Dataset) -> Result<Vec<(usize, f64)>> {
    let r = draws.len();
    let n0 = dataset.n0();
    if r <= n0 {
        return Err(Error::InsufficientSubsampleSize { r, n0 });
    }
    check_probs(draws)?;
    check_indices(draws, dataset)?;
    let m = (r - n0) as f64;
    Ok(draws
        .iter()
        .map(|d| {
            let w = if dataset.get(d.index).censored { 1.0 / (m * d.prob) } else { 1.0 };
            (d.index, w)
        })
        .collect())
}

/// General subsampling objective `(1/r) sum (1/pi*) l(x*)`.
pub fn weighted_loglik_general(params: &ParamVector, draws: &[WeightedDraw], dataset: &Dataset) -> Result<f64> {
    weighted_value(params, dataset, &general_terms(draws, dataset)?)
}

pub fn weighted_loglik_general_eval(
    params: &ParamVector,
    draws: &[WeightedDraw],
    dataset: &Dataset,
) -> Result<Evaluation> {
    let jet = weighted_jet(params, dataset, &general_terms(draws, dataset)?)?;
    Ok(to_evaluation(&jet, params.dim()))
}

/// Censoring subsampling objective `sum omega l(x)`: uncensored units carry
/// weight 1, censored draws `1 / ((r - n0) pi~)`.
pub fn weighted_loglik_censoring(params: &ParamVector, draws: &[WeightedDraw], dataset: &Dataset) -> Result<f64> {
    weighted_value(params, dataset, &censoring_terms(draws, dataset)?)
}

pub fn weighted_loglik_censoring_eval(
    params: &ParamVector,
    draws: &[WeightedDraw],
    dataset: &Dataset,
) -> Result<Evaluation> {
    let jet = weighted_jet(params, dataset, &censoring_terms(draws, dataset)?)?;
    Ok(to_evaluation(&jet, params.dim()))
}

/// Full-data mean log-likelihood as an optimizer objective.
pub struct FullObjective<'a> {
    pub dataset: &'a Dataset,
}

impl Objective for FullObjective<'_> {
    fn value(&self, params: &ParamVector) -> Result<f64> {
        full_loglik(params, self.dataset)
    }

    fn evaluate(&self, params: &ParamVector) -> Result<Evaluation> {
        full_loglik_eval(params, self.dataset)
    }
}

/// Weighted sum of selected log-likelihood terms. Covers the general and
/// censoring subsample objectives and the unweighted pilot objective.
pub struct SubsampleObjective<'a> {
    dataset: &'a Dataset,
    terms: Vec<(usize, f64)>,
}

impl<'a> SubsampleObjective<'a> {
    pub fn general(dataset: &'a Dataset, draws: &[WeightedDraw]) -> Result<Self> {
        Ok(SubsampleObjective { dataset, terms: general_terms(draws, dataset)? })
    }

    pub fn censoring(dataset: &'a Dataset, draws: &[WeightedDraw]) -> Result<Self> {
        Ok(SubsampleObjective { dataset, terms: censoring_terms(draws, dataset)? })
    }

    /// Plain mean log-likelihood over the drawn units.
    pub fn unweighted(dataset: &'a Dataset, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let w = 1.0 / indices.len() as f64;
        Ok(SubsampleObjective { dataset, terms: indices.iter().map(|&i| (i, w)).collect() })
    }

    /// Explicit `(index, weight)` terms.
    pub fn from_terms(dataset: &'a Dataset, terms: Vec<(usize, f64)>) -> Self {
        SubsampleObjective { dataset, terms }
    }

    pub fn total_weight(&self) -> f64 {
        crate::reduce::tree_sum(self.terms.len(), |k| self.terms[k].1)
    }
}

impl Objective for SubsampleObjective<'_> {
    fn value(&self, params: &ParamVector) -> Result<f64> {
        weighted_value(params, self.dataset, &self.terms)
    }

    fn evaluate(&self, params: &ParamVector) -> Result<Evaluation> {
        let jet = weighted_jet(params, self.dataset, &self.terms)?;
        Ok(to_evaluation(&jet, params.dim()))
    }
}

/// Closed-form exponential MLE `n0 / sum (t - t_trunc)`.
pub fn exponential_mle(dataset: &Dataset) -> Result<ParamVector> {
    if dataset.n0() == 0 {
        return Err(Error::NoUncensoredData);
    }
    let exposure = crate::reduce::tree_sum(dataset.n(), |i| {
        let o = dataset.get(i);
        o.t - o.t_trunc
    });
    ParamVector::new(ModelKind::Exponential, &[dataset.n0() as f64 / exposure])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn obs(t: f64, c: bool, tl: f64) -> Observation {
        Observation::new(t, c, tl).unwrap()
    }

    fn small() -> Dataset {
        Dataset::new(vec![obs(1.0, false, 0.0), obs(2.0, false, 0.0), obs(3.0, true, 0.0)])
    }

    #[test]
    fn observation_validation() {
        assert!(Observation::new(1.0, false, 2.0).is_err());
        assert!(Observation::new(1.0, false, -0.1).is_err());
        assert!(Observation::new(f64::NAN, true, 0.0).is_err());
        assert!(Observation::new(2.0, false, 2.0).is_ok());
    }

    #[test]
    fn dataset_counts() {
        let d = small();
        assert_eq!((d.n(), d.n0(), d.n1()), (3, 2, 1));
        assert_relative_eq!(d.alpha(), 1.0 / 3.0);
        assert_eq!(d.censored_indices(), &[2]);
    }

    #[test]
    fn obs_loglik_examples() {
        let e1 = ParamVector::exponential(1.0).unwrap();
        assert_eq!(obs_loglik(&e1, &obs(0.0, false, 0.0)).unwrap(), 0.0);
        let e = ParamVector::exponential(0.5).unwrap();
        assert_relative_eq!(obs_loglik(&e, &obs(2.0, true, 1.0)).unwrap(), -0.5);
        let w = ParamVector::weibull(2.0, 1.0).unwrap();
        assert_relative_eq!(obs_loglik(&w, &obs(1.0, true, 0.0)).unwrap(), -1.0);
    }

    #[test]
    fn score_examples() {
        let e = ParamVector::exponential(2.0).unwrap();
        let o = obs(1.0, false, 0.0);
        assert_relative_eq!(obs_score(&e, &o).unwrap()[0], -0.5);
        assert_relative_eq!(obs_hessian(&e, &o).unwrap()[(0, 0)], -0.25);
        let w = ParamVector::weibull(2.0, 4.0).unwrap();
        let s = obs_score(&w, &obs(3.0, true, 3.0)).unwrap();
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn full_loglik_examples() {
        let e = ParamVector::exponential(1.0 / 3.0).unwrap();
        let ev = full_loglik_eval(&e, &small()).unwrap();
        assert!(ev.gradient[0].abs() < 1e-14);
        let one = obs(1.5, false, 0.2);
        let w = ParamVector::weibull(1.3, 2.0).unwrap();
        let twice = Dataset::new(vec![one, one]);
        assert_relative_eq!(full_loglik(&w, &twice).unwrap(), obs_loglik(&w, &one).unwrap(), epsilon = 1e-15);
        assert!(matches!(full_loglik(&w, &Dataset::new(vec![])), Err(Error::EmptyDataset)));
        assert_relative_eq!(exponential_mle(&small()).unwrap().values()[0], 1.0 / 3.0);
    }

    #[test]
    fn general_objective_examples() {
        let d = Dataset::new(vec![obs(1.0, false, 0.0)]);
        let e = ParamVector::exponential(1.0).unwrap();
        let draws = [WeightedDraw::general(0, 0.5, 1)];
        assert_relative_eq!(weighted_loglik_general(&e, &draws, &d).unwrap(), -2.0);
        let bad = [WeightedDraw { index: 0, prob: 0.0, weight: f64::INFINITY }];
        assert!(matches!(weighted_loglik_general(&e, &bad, &d), Err(Error::ZeroProbabilityDraw { .. })));
    }

    #[test]
    fn censoring_objective_examples() {
        let d = Dataset::new(vec![obs(1.0, false, 0.0), obs(2.0, true, 0.0)]);
        let e = ParamVector::exponential(1.0).unwrap();
        let draws = [WeightedDraw::uncensored(0), WeightedDraw::censored(1, 1.0, 2, 1)];
        assert_relative_eq!(weighted_loglik_censoring(&e, &draws, &d).unwrap(), -3.0);
        assert!(matches!(
            weighted_loglik_censoring(&e, &draws[..1], &d),
            Err(Error::InsufficientSubsampleSize { r: 1, n0: 1 })
        ));
        assert_relative_eq!(WeightedDraw::censored(0, 0.25, 5, 3).weight, 2.0);
    }
}
