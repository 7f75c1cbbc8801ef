//! Subsampling probabilities (uniform, A-optimal, RDS, RDCS), uniform mixing
//! and with-replacement draws via the alias method.

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{self, Dataset, WeightedDraw};
use crate::models::{ParamVector, MAX_DIM};
use crate::reduce::tree_sum;
use crate::rng::StreamRng;

/// Which units a probability vector ranges over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Support {
    /// Entry `k` is dataset index `k`.
    AllUnits,
    /// Entry `k` is dataset index `indices[k]`; uncensored units are excluded.
    CensoredOnly { indices: Vec<usize> },
}

/// Draw probabilities over a support, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    probs: Vec<f64>,
    support: Support,
}

impl ProbVector {
    /// Builds a vector from explicit probabilities, checking nonnegativity
    /// and unit sum (within 1e-12).
    pub fn new(probs: Vec<f64>, support: Support) -> Result<Self> {
        if let Support::CensoredOnly { indices } = &support {
            if indices.len() != probs.len() {
                return Err(Error::InvalidConfig("support and probabilities differ in length".into()));
            }
        }
        if probs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidConfig("probabilities must be finite and nonnegative".into()));
        }
        let total = tree_sum(probs.len(), |k| probs[k]);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("probabilities sum to {total}, not 1")));
        }
        Ok(ProbVector { probs, support })
    }

    /// Normalizes nonnegative scores to probabilities.
    fn from_scores(scores: Vec<f64>, support: Support) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteValue("subsampling score norm".into()));
        }
        let total = tree_sum(scores.len(), |k| scores[k]);
        if total <= 0.0 {
            return Err(Error::AllScoresZero);
        }
        let probs = scores.into_iter().map(|s| s / total).collect();
        Ok(ProbVector { probs, support })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    /// Number of units in the support.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Dataset index of entry `k`.
    pub fn dataset_index(&self, k: usize) -> usize {
        match &self.support {
            Support::AllUnits => k,
            Support::CensoredOnly { indices } => indices[k],
        }
    }

    /// Probabilities as a dense length-`n` vector with zeros off the support.
    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        match &self.support {
            Support::AllUnits => self.probs.clone(),
            Support::CensoredOnly { indices } => {
                let mut dense = vec![0.0; n];
                for (k, &i) in indices.iter().enumerate() {
                    dense[i] = self.probs[k];
                }
                dense
            }
        }
    }
}

/// Equal probabilities `1/n` over all units.
pub fn uniform_probs(dataset: &Dataset) -> Result<ProbVector> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.n();
    Ok(ProbVector { probs: vec![1.0 / n as f64; n], support: Support::AllUnits })
}

/// Equal probabilities over the censored units only.
pub fn uniform_censored_probs(dataset: &Dataset) -> Result<ProbVector> {
    let indices = dataset.censored_indices().to_vec();
    if indices.is_empty() {
        return Err(Error::NoCensoredUnits);
    }
    let m = indices.len();
    Ok(ProbVector { probs: vec![1.0 / m as f64; m], support: Support::CensoredOnly { indices } })
}

fn score_norms(dataset: &Dataset, theta: &ParamVector, indices: Option<&[usize]>, transform: Option<&DMatrix<f64>>) -> Result<Vec<f64>> {
    let dim = theta.dim();
    let norm_of = |i: usize| -> Result<f64> {
        let jet = likelihood::obs_jet(theta, dataset.get(i))?;
        let g = &jet.grad[..dim];
        let mut buf = [0.0; MAX_DIM];
        let v: &[f64] = match transform {
            None => g,
            Some(m) => {
                for (r, out) in buf.iter_mut().enumerate().take(dim) {
                    *out = (0..dim).map(|c| m[(r, c)] * g[c]).sum();
                }
                &buf[..dim]
            }
        };
        Ok(v.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    match indices {
        None => (0..dataset.n()).into_par_iter().map(norm_of).collect(),
        Some(idx) => idx.par_iter().map(|&i| norm_of(i)).collect(),
    }
}

/// `pi_i ∝ ||score_i(theta)||`.
pub fn rds_probs(dataset: &Dataset, theta: &ParamVector) -> Result<ProbVector> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ProbVector::from_scores(score_norms(dataset, theta, None, None)?, Support::AllUnits)
}

/// Inverse of the mean Hessian, failing unless it is negative definite.
pub fn information_inverse(dataset: &Dataset, theta: &ParamVector) -> Result<DMatrix<f64>> {
    let m = likelihood::full_loglik_eval(theta, dataset)?.hessian;
    negdef_inverse(&m).ok_or(Error::SingularInformationMatrix)
}

/// `M^{-1}` for a symmetric negative definite `M`, via Cholesky of `-M`.
pub(crate) fn negdef_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * -0.5;
    let inv = Cholesky::new(sym)?.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(-inv)
}

/// `pi_i ∝ ||M^{-1} score_i(theta)||` with `M` the full-data mean Hessian.
pub fn aopt_probs(dataset: &Dataset, theta: &ParamVector) -> Result<ProbVector> {
    let m_inv = information_inverse(dataset, theta)?;
    aopt_probs_with(dataset, theta, &m_inv)
}

/// A-optimal probabilities with a caller-supplied `M^{-1}`.
pub fn aopt_probs_with(dataset: &Dataset, theta: &ParamVector, m_inv: &DMatrix<f64>) -> Result<ProbVector> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if m_inv.nrows() != theta.dim() || m_inv.ncols() != theta.dim() {
        return Err(Error::InvalidConfig("M^{-1} has the wrong dimension".into()));
    }
    ProbVector::from_scores(score_norms(dataset, theta, None, Some(m_inv))?, Support::AllUnits)
}

/// Censored units only, `pi~_i ∝ ||grad log S(t_i) - grad log S(t_trunc,i)||`.
pub fn rdcs_probs(dataset: &Dataset, theta: &ParamVector) -> Result<ProbVector> {
    let indices = dataset.censored_indices();
    if indices.is_empty() {
        return Err(Error::NoCensoredUnits);
    }
    // For a censored unit the score is exactly that survival-gradient difference.
    let norms = score_norms(dataset, theta, Some(indices), None)?;
    ProbVector::from_scores(norms, Support::CensoredOnly { indices: indices.to_vec() })
}

/// `(1 - xi) p + xi / m` where `m` is the support size.
pub fn mix_probs(base: &ProbVector, xi: f64) -> Result<ProbVector> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::InvalidConfig(format!("mixing constant must lie in [0, 1], got {xi}")));
    }
    let floor = xi / base.len() as f64;
    let probs = base.probs.iter().map(|p| (1.0 - xi) * p + floor).collect();
    Ok(ProbVector { probs, support: base.support.clone() })
}

/// Walker/Vose alias table for O(1) categorical draws.
#[derive(Debug, Clone)]
pub struct AliasTable {
    cutoff: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    pub fn new(probs: &[f64]) -> Result<Self> {
        let n = probs.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let total: f64 = tree_sum(n, |k| probs[k]);
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::AllScoresZero);
        }
        let mut scaled: Vec<f64> = probs.iter().map(|p| p * n as f64 / total).collect();
        let mut cutoff = vec![1.0; n];
        let mut alias: Vec<usize> = (0..n).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&k| scaled[k] < 1.0);
        while !small.is_empty() && !large.is_empty() {
            let s = small.pop().expect("nonempty");
            let l = *large.last().expect("nonempty");
            cutoff[s] = scaled[s];
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers are 1 up to rounding.
        for k in small.into_iter().chain(large) {
            cutoff[k] = 1.0;
            alias[k] = k;
        }
        Ok(AliasTable { cutoff, alias })
    }

    pub fn sample(&self, rng: &mut StreamRng) -> usize {
        let k = rng.random_range(0..self.cutoff.len());
        let u: f64 = rng.random();
        if u < self.cutoff[k] {
            k
        } else {
            self.alias[k]
        }
    }
}

/// `r` independent draws; each carries its dataset index, probability and
/// the general-subsampling weight `1 / (r pi)`.
pub fn draw_with_replacement(probs: &ProbVector, r: usize, rng: &mut StreamRng) -> Result<Vec<WeightedDraw>> {
    if r == 0 {
        return Err(Error::InvalidConfig("subsample size must be positive".into()));
    }
    let table = AliasTable::new(&probs.probs)?;
    Ok((0..r)
        .map(|_| {
            let k = table.sample(rng);
            WeightedDraw::general(probs.dataset_index(k), probs.probs[k], r)
        })
        .collect())
}

/// Realized subsample together with the probabilities it was drawn from.
#[derive(Debug, Clone)]
pub struct SubsamplePlan {
    pub probs: ProbVector,
    pub draws: Vec<WeightedDraw>,
}

/// Censoring subsample: every uncensored unit with weight 1, followed by
/// `r - n0` draws from `probs` (over censored units) with weights
/// `1 / ((r - n0) pi~)`.
pub fn censoring_subsample(dataset: &Dataset, probs: &ProbVector, r: usize, rng: &mut StreamRng) -> Result<Vec<WeightedDraw>> {
    let n0 = dataset.n0();
    if r <= n0 {
        return Err(Error::SubsampleTooSmall { r, n0 });
    }
    if !matches!(probs.support, Support::CensoredOnly { .. }) {
        return Err(Error::InvalidConfig("censoring subsample needs probabilities over censored units".into()));
    }
    let table = AliasTable::new(&probs.probs)?;
    let mut draws: Vec<WeightedDraw> = dataset.uncensored_indices().iter().map(|&i| WeightedDraw::uncensored(i)).collect();
    draws.extend((0..r - n0).map(|_| {
        let k = table.sample(rng);
        WeightedDraw::censored(probs.dataset_index(k), probs.probs[k], r, n0)
    }));
    Ok(draws)
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
    fn uniform_examples() {
        let d = Dataset::new(vec![obs(1.0, false, 0.0); 4]);
        assert_eq!(uniform_probs(&d).unwrap().probs(), &[0.25; 4]);
        let one = Dataset::new(vec![obs(1.0, false, 0.0)]);
        assert_eq!(uniform_probs(&one).unwrap().probs(), &[1.0]);
        assert!(matches!(uniform_probs(&Dataset::new(vec![])), Err(Error::EmptyDataset)));
    }

    #[test]
    fn rds_example() {
        let d = Dataset::new(vec![obs(1.0, false, 0.0), obs(1.0, true, 0.0)]);
        let p = rds_probs(&d, &ParamVector::exponential(2.0).unwrap()).unwrap();
        assert_relative_eq!(p.probs()[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(p.probs()[1], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_scores_are_rejected() {
        // Uncensored units with t = 1/theta have zero score.
        let d = Dataset::new(vec![obs(0.5, false, 0.0); 3]);
        assert!(matches!(rds_probs(&d, &ParamVector::exponential(2.0).unwrap()), Err(Error::AllScoresZero)));
    }

    #[test]
    fn aopt_with_injected_matrix() {
        let d = Dataset::new(vec![obs(1.0, false, 0.0), obs(3.0, true, 1.0), obs(5.0, false, 2.0)]);
        let w = ParamVector::weibull(2.0, 4.0).unwrap();
        let m_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.25]));
        let p = aopt_probs_with(&d, &w, &m_inv).unwrap();
        let norms: Vec<f64> = d
            .observations()
            .iter()
            .map(|o| {
                let s = likelihood::obs_score(&w, o).unwrap();
                (s[0] * s[0] + s[1] * s[1] / 16.0).sqrt()
            })
            .collect();
        let total: f64 = norms.iter().sum();
        for (pk, nk) in p.probs().iter().zip(&norms) {
            assert_relative_eq!(*pk, nk / total, max_relative = 1e-13);
        }
    }

    #[test]
    fn rdcs_exponential_is_parameter_free() {
        let d = Dataset::new(vec![obs(2.0, true, 0.0), obs(1.0, false, 0.0), obs(4.0, true, 0.0)]);
        for theta in [0.1, 1.0, 7.0] {
            let p = rdcs_probs(&d, &ParamVector::exponential(theta).unwrap()).unwrap();
            assert_relative_eq!(p.probs()[0], 1.0 / 3.0, epsilon = 1e-15);
            assert_relative_eq!(p.probs()[1], 2.0 / 3.0, epsilon = 1e-15);
            assert_eq!(p.dataset_index(1), 2);
        }
        let none = Dataset::new(vec![obs(1.0, false, 0.0)]);
        assert!(matches!(rdcs_probs(&none, &ParamVector::exponential(1.0).unwrap()), Err(Error::NoCensoredUnits)));
    }

    #[test]
    fn mixing_examples() {
        let base = ProbVector::new(vec![0.9, 0.1], Support::AllUnits).unwrap();
        let m = mix_probs(&base, 0.1).unwrap();
        assert_relative_eq!(m.probs()[0], 0.86, epsilon = 1e-15);
        assert_relative_eq!(m.probs()[1], 0.14, epsilon = 1e-15);
        assert_eq!(mix_probs(&base, 0.0).unwrap().probs(), base.probs());
        assert_eq!(mix_probs(&base, 1.0).unwrap().probs(), &[0.5, 0.5]);
        assert!(mix_probs(&base, 1.5).is_err());
    }

    #[test]
    fn degenerate_draws() {
        let p = ProbVector::new(vec![1.0], Support::AllUnits).unwrap();
        let mut r = rng::stream(1, &[0]);
        let draws = draw_with_replacement(&p, 5, &mut r).unwrap();
        assert!(draws.iter().all(|d| d.index == 0 && d.weight == 0.2));
    }

    #[test]
    fn alias_never_picks_zero_mass() {
        let p = ProbVector::new(vec![0.0, 0.5, 0.0, 0.5], Support::AllUnits).unwrap();
        let mut r = rng::stream(2, &[0]);
        let draws = draw_with_replacement(&p, 10_000, &mut r).unwrap();
        assert!(draws.iter().all(|d| d.index == 1 || d.index == 3));
    }

    #[test]
    fn censoring_subsample_layout() {
        let d = Dataset::new(vec![obs(1.0, false, 0.0), obs(2.0, true, 0.0), obs(3.0, true, 0.0)]);
        let p = uniform_censored_probs(&d).unwrap();
        let mut r = rng::stream(3, &[0]);
        let draws = censoring_subsample(&d, &p, 4, &mut r).unwrap();
        assert_eq!(draws.len(), 4);
        assert_eq!(draws[0], WeightedDraw::uncensored(0));
        for w in &draws[1..] {
            assert!(w.index == 1 || w.index == 2);
            assert_relative_eq!(w.weight, 1.0 / (3.0 * 0.5));
        }
        assert!(matches!(censoring_subsample(&d, &p, 1, &mut r), Err(Error::SubsampleTooSmall { r: 1, n0: 1 })));
    }
}
