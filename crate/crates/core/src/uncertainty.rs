//! Sandwich covariance estimates: subsample-only estimators for RDS and RDCS
//! fits, full-data oracle covariances, and Wald confidence intervals.

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::likelihood::{self, Dataset, WeightedDraw};
use crate::models::{Jet, ParamVector};
use crate::subsampling::{negdef_inverse, ProbVector, Support};

fn rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    rows.serialize(s)
}

/// `V = M^{-1} Lambda M^{-1}` with its ingredients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovReport {
    #[serde(serialize_with = "rows")]
    pub m_hat: DMatrix<f64>,
    #[serde(serialize_with = "rows")]
    pub lambda_hat: DMatrix<f64>,
    #[serde(serialize_with = "rows")]
    pub v_hat: DMatrix<f64>,
    /// `sqrt(diag(V) / r)`.
    pub ese: Vec<f64>,
    pub gamma: f64,
}

fn outer_add(acc: &mut DMatrix<f64>, g: &[f64], w: f64) {
    let d = acc.nrows();
    for r in 0..d {
        for c in 0..d {
            acc[(r, c)] += w * g[r] * g[c];
        }
    }
}

fn hess_add(acc: &mut DMatrix<f64>, jet: &Jet, w: f64) {
    let d = acc.nrows();
    for r in 0..d {
        for c in 0..d {
            acc[(r, c)] += w * jet.hess[r][c];
        }
    }
}

fn unit_jet(theta: &ParamVector, dataset: &Dataset, i: usize) -> Result<Jet> {
    let jet = likelihood::obs_jet(theta, dataset.get(i))?;
    if jet.is_finite(theta.dim()) {
        Ok(jet)
    } else {
        Err(Error::NonFiniteValue(format!("score at unit {i}")))
    }
}

fn sandwich(m: DMatrix<f64>, lambda: DMatrix<f64>, r: f64, gamma: f64, singular: Error) -> Result<CovReport> {
    let m_inv = negdef_inverse(&m).ok_or(singular)?;
    let v = &m_inv * &lambda * &m_inv;
    let v = (&v + v.transpose()) * 0.5;
    let ese = v.diagonal().iter().map(|x| (x.max(0.0) / r).sqrt()).collect();
    Ok(CovReport { m_hat: m, lambda_hat: lambda, v_hat: v, ese, gamma })
}

fn check_draws(draws: &[WeightedDraw], dataset: &Dataset) -> Result<()> {
    if draws.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for d in draws {
        if d.index >= dataset.n() {
            return Err(Error::InvalidConfig(format!("draw index {} out of range", d.index)));
        }
        if !(d.prob > 0.0) {
            return Err(Error::ZeroProbabilityDraw { index: d.index, prob: d.prob });
        }
    }
    Ok(())
}

/// Subsample covariance estimate for a general (RDS or uniform) fit:
///
/// ```text
/// M      = 1/(n r)   sum 1/pi l''
/// Lambda = 1/(n^2 r) sum (1 + n gamma pi) / pi^2 l' l'^T
/// ```
///
/// with `gamma = r / n` when `include_gamma` is set and 0 otherwise.
pub fn var_rds(
    draws: &[WeightedDraw],
    dataset: &Dataset,
    theta_tilde: &ParamVector,
    n: usize,
    r: usize,
    include_gamma: bool,
) -> Result<CovReport> {
    check_draws(draws, dataset)?;
    let d = theta_tilde.dim();
    let (nf, rf) = (n as f64, r as f64);
    let gamma = if include_gamma { rf / nf } else { 0.0 };
    let mut m = DMatrix::zeros(d, d);
    let mut lambda = DMatrix::<f64>::zeros(d, d);
    for draw in draws {
        let jet = unit_jet(theta_tilde, dataset, draw.index)?;
        let p = draw.prob;
        hess_add(&mut m, &jet, 1.0 / (nf * rf * p));
        outer_add(&mut lambda, &jet.grad[..d], (1.0 + nf * gamma * p) / (nf * nf * rf * p * p));
    }
    sandwich(m, lambda, rf, gamma, Error::SingularMHat)
}

/// Subsample covariance estimate for a censoring (RDCS) fit.
///
/// `M = 1/n sum omega l''` over all `r` subsample units. `Lambda` follows the
/// general form over the censored draws only, minus the outer product of
/// `1/(n r) sum l'/pi~`.
pub fn var_rdcs(
    draws: &[WeightedDraw],
    dataset: &Dataset,
    theta_tilde: &ParamVector,
    n: usize,
    n0: usize,
    r: usize,
    include_gamma: bool,
) -> Result<CovReport> {
    check_draws(draws, dataset)?;
    if r <= n0 {
        return Err(Error::SubsampleTooSmall { r, n0 });
    }
    let d = theta_tilde.dim();
    let (nf, rf) = (n as f64, r as f64);
    let m_draws = (r - n0) as f64;
    let gamma = if include_gamma { rf / nf } else { 0.0 };
    let mut m = DMatrix::zeros(d, d);
    let mut lambda = DMatrix::<f64>::zeros(d, d);
    let mut mean = DVector::<f64>::zeros(d);
    for draw in draws {
        let jet = unit_jet(theta_tilde, dataset, draw.index)?;
        if dataset.get(draw.index).censored() {
            let p = draw.prob;
            hess_add(&mut m, &jet, 1.0 / (nf * m_draws * p));
            outer_add(&mut lambda, &jet.grad[..d], (1.0 + nf * gamma * p) / (nf * nf * rf * p * p));
            for k in 0..d {
                mean[k] += jet.grad[k] / (nf * rf * p);
            }
        } else {
            hess_add(&mut m, &jet, 1.0 / nf);
        }
    }
    lambda -= &mean * mean.transpose();
    sandwich(m, lambda, rf, gamma, Error::SingularMHat)
}

/// Full-data covariance of the general subsampling estimator under `probs`:
/// `M = 1/n sum l''`, `Lambda = 1/n^2 sum l' l'^T / pi`. `ese` is reported
/// per unit subsample size (`r = 1`).
pub fn oracle_cov_general(dataset: &Dataset, theta_hat: &ParamVector, probs: &ProbVector) -> Result<CovReport> {
    if !matches!(probs.support(), Support::AllUnits) || probs.len() != dataset.n() {
        return Err(Error::InvalidConfig("general covariance needs probabilities over all units".into()));
    }
    let d = theta_hat.dim();
    let nf = dataset.n() as f64;
    let mut m = DMatrix::zeros(d, d);
    let mut lambda = DMatrix::<f64>::zeros(d, d);
    for (i, &p) in probs.probs().iter().enumerate() {
        let jet = unit_jet(theta_hat, dataset, i)?;
        hess_add(&mut m, &jet, 1.0 / nf);
        let g = &jet.grad[..d];
        if g.iter().any(|v| *v != 0.0) {
            if p <= 0.0 {
                return Err(Error::ZeroProbabilityDraw { index: i, prob: p });
            }
            outer_add(&mut lambda, g, 1.0 / (nf * nf * p));
        }
    }
    sandwich(m, lambda, 1.0, 0.0, Error::SingularInformationMatrix)
}

/// Full-data covariance of the censoring subsampling estimator:
/// `Lambda = 1/n^2 sum_cens l' l'^T / pi~ - (1/n sum_cens l')(...)^T`.
pub fn oracle_cov_censoring(dataset: &Dataset, theta_hat: &ParamVector, probs: &ProbVector) -> Result<CovReport> {
    let Support::CensoredOnly { indices } = probs.support() else {
        return Err(Error::InvalidConfig("censoring covariance needs probabilities over censored units".into()));
    };
    let d = theta_hat.dim();
    let nf = dataset.n() as f64;
    let m = likelihood::full_loglik_eval(theta_hat, dataset)?.hessian;
    let mut lambda = DMatrix::<f64>::zeros(d, d);
    let mut mean = DVector::<f64>::zeros(d);
    for (&i, &p) in indices.iter().zip(probs.probs()) {
        let jet = unit_jet(theta_hat, dataset, i)?;
        let g = &jet.grad[..d];
        for k in 0..d {
            mean[k] += g[k] / nf;
        }
        if g.iter().any(|v| *v != 0.0) {
            if p <= 0.0 {
                return Err(Error::ZeroProbabilityDraw { index: i, prob: p });
            }
            outer_add(&mut lambda, g, 1.0 / (nf * nf * p));
        }
    }
    lambda -= &mean * mean.transpose();
    sandwich(m, lambda, 1.0, 0.0, Error::SingularInformationMatrix)
}

/// Per-parameter Wald intervals `theta_k ± z ese_k` at the given level.
pub fn confidence_interval(theta: &ParamVector, cov: &CovReport, level: f64) -> Result<Vec<(f64, f64)>> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::InvalidConfig(format!("confidence level must lie in [0, 1), got {level}")));
    }
    let z = if level == 0.0 {
        0.0
    } else {
        Normal::standard().inverse_cdf(0.5 * (1.0 + level))
    };
    Ok(theta
        .values()
        .iter()
        .zip(&cov.ese)
        .map(|(t, e)| (t - z * e, t + z * e))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::Observation;
    use approx::assert_relative_eq;

    fn obs(t: f64, c: bool, tl: f64) -> Observation {
        Observation::new(t, c, tl).unwrap()
    }

    #[test]
    fn var_rds_scalar_hand_oracle() {
        // Scores -0.5 and -1, Hessians -0.25 and 0, both drawn with prob 0.5.
        let d = Dataset::new(vec![obs(1.0, false, 0.0), obs(1.0, true, 0.0)]);
        let theta = ParamVector::exponential(2.0).unwrap();
        let draws = [WeightedDraw::general(0, 0.5, 2), WeightedDraw::general(1, 0.5, 2)];
        for n in [2usize, 10, 1000] {
            let cov = var_rds(&draws, &d, &theta, n, 2, false).unwrap();
            let nf = n as f64;
            assert_relative_eq!(cov.m_hat[(0, 0)], -0.25 / nf, max_relative = 1e-14);
            assert_relative_eq!(cov.lambda_hat[(0, 0)], 2.5 / (nf * nf), max_relative = 1e-14);
            assert_relative_eq!(cov.v_hat[(0, 0)], 40.0, max_relative = 1e-12);
            assert_relative_eq!(cov.ese[0], 20f64.sqrt(), max_relative = 1e-12);
        }
    }

    #[test]
    fn gamma_term_is_negligible_for_small_fractions() {
        let n = 2000;
        let d: Dataset = (0..n).map(|i| obs(0.1 + (i % 7) as f64, i % 3 == 0, 0.0)).collect();
        let theta = ParamVector::exponential(0.8).unwrap();
        let p = 1.0 / n as f64;
        // r / n = 1e-3
        let draws = [WeightedDraw::general(4, p, 2), WeightedDraw::general(11, p, 2)];
        let on = var_rds(&draws, &d, &theta, n, 2, true).unwrap();
        let off = var_rds(&draws, &d, &theta, n, 2, false).unwrap();
        assert!((on.v_hat[(0, 0)] / off.v_hat[(0, 0)] - 1.0).abs() <= 5e-3);
        assert_relative_eq!(on.gamma, 1e-3);
    }

    #[test]
    fn var_rdcs_zero_score_draw() {
        let d = Dataset::new(vec![obs(1.0, false, 0.0), obs(2.0, true, 2.0)]);
        let theta = ParamVector::exponential(1.0).unwrap();
        let draws = [WeightedDraw::uncensored(0), WeightedDraw::censored(1, 1.0, 2, 1)];
        let cov = var_rdcs(&draws, &d, &theta, 2, 1, 2, false).unwrap();
        assert_eq!(cov.lambda_hat[(0, 0)], 0.0);
        assert_eq!(cov.v_hat[(0, 0)], 0.0);
    }

    #[test]
    fn var_rdcs_scalar_hand_oracle() {
        // Exponential theta = 1; uncensored (1,0,0), censored (2,1,0) and (4,1,1).
        // Censored scores -2 and -3 drawn with probs 0.4 and 0.6; n = 3, n0 = 1, r = 3.
        let d = Dataset::new(vec![obs(1.0, false, 0.0), obs(2.0, true, 0.0), obs(4.0, true, 1.0)]);
        let theta = ParamVector::exponential(1.0).unwrap();
        let draws = [
            WeightedDraw::uncensored(0),
            WeightedDraw::censored(1, 0.4, 3, 1),
            WeightedDraw::censored(2, 0.6, 3, 1),
        ];
        let cov = var_rdcs(&draws, &d, &theta, 3, 1, 3, false).unwrap();
        let m = -1.0 / 3.0;
        let first = (4.0 / 0.16 + 9.0 / 0.36) / (9.0 * 3.0);
        let mean = (-2.0 / 0.4 - 3.0 / 0.6) / 9.0;
        let lambda = first - mean * mean;
        assert_relative_eq!(cov.m_hat[(0, 0)], m, max_relative = 1e-14);
        assert_relative_eq!(cov.lambda_hat[(0, 0)], lambda, max_relative = 1e-13);
        assert_relative_eq!(cov.v_hat[(0, 0)], lambda / (m * m), max_relative = 1e-13);
    }

    #[test]
    fn oracle_uniform_collapses() {
        let d = Dataset::new(vec![obs(1.0, false, 0.0), obs(2.0, true, 0.5), obs(0.3, false, 0.1)]);
        let theta = ParamVector::exponential(0.7).unwrap();
        let p = crate::subsampling::uniform_probs(&d).unwrap();
        let cov = oracle_cov_general(&d, &theta, &p).unwrap();
        let scores: Vec<f64> = d.observations().iter().map(|o| likelihood::obs_score(&theta, o).unwrap()[0]).collect();
        let expected = scores.iter().map(|s| s * s).sum::<f64>() / 3.0;
        assert_relative_eq!(cov.lambda_hat[(0, 0)], expected, max_relative = 1e-14);
    }

    #[test]
    fn singular_m_hat_is_reported() {
        // Only censored draws: the exponential Hessian vanishes.
        let d = Dataset::new(vec![obs(2.0, true, 0.0)]);
        let theta = ParamVector::exponential(1.0).unwrap();
        let draws = [WeightedDraw::general(0, 1.0, 1)];
        assert!(matches!(var_rds(&draws, &d, &theta, 1, 1, false), Err(Error::SingularMHat)));
    }

    #[test]
    fn interval_examples() {
        let theta = ParamVector::exponential(1.0).unwrap();
        let mk = |e: f64| CovReport {
            m_hat: DMatrix::zeros(1, 1),
            lambda_hat: DMatrix::zeros(1, 1),
            v_hat: DMatrix::zeros(1, 1),
            ese: vec![e],
            gamma: 0.0,
        };
        let ci = confidence_interval(&theta, &mk(0.1), 0.95).unwrap();
        assert_relative_eq!(ci[0].0, 1.0 - 0.195_996_4, epsilon = 1e-6);
        assert_relative_eq!(ci[0].1, 1.0 + 0.195_996_4, epsilon = 1e-6);
        assert_eq!(confidence_interval(&theta, &mk(0.0), 0.95).unwrap()[0], (1.0, 1.0));
        assert_eq!(confidence_interval(&theta, &mk(0.1), 0.0).unwrap()[0], (1.0, 1.0));
        assert!(confidence_interval(&theta, &mk(0.1), 1.0).is_err());
    }
}
