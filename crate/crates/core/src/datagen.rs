//! Synthetic left-truncated, right-censored lifetime data.
//!
//! Each unit gets a truncation age `t_trunc ~ U(a, b)`, a lifetime `X` from
//! the model and a censoring time `Z ~ U(c, d)`; the record is
//! `(min(X, Z), Z < X, t_trunc)`. Every unit draws from its own ChaCha
//! stream, so output does not depend on the thread count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{Dataset, Observation};
use crate::models::{self, ModelKind, ParamVector};
use crate::rng::{self, Stage, StreamRng};

/// Attempts per unit before giving up (an acceptance rate below 0.1%).
const REJECTION_BUDGET: usize = 1000;
const PROBE_SIZE: usize = 100_000;
const ALPHA_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationMode {
    /// Lifetimes are drawn conditional on exceeding the truncation age.
    #[default]
    Conditional,
    /// Units whose lifetime falls below the truncation age are regenerated
    /// from scratch, truncation age included.
    Independent,
}

impl std::str::FromStr for TruncationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "conditional" => Ok(TruncationMode::Conditional),
            "independent" => Ok(TruncationMode::Independent),
            other => Err(Error::InvalidConfig(format!("unknown truncation mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub true_params: ParamVector,
    pub n: usize,
    pub trunc_window: (f64, f64),
    pub censor_window: (f64, f64),
    pub truncation_mode: TruncationMode,
    pub seed: u64,
    /// Exact number of uncensored units. Units are generated in index order
    /// and kept while their class (censored or not) still has room.
    pub fixed_uncensored: Option<usize>,
}

impl GenConfig {
    pub fn new(true_params: ParamVector, n: usize, trunc_window: (f64, f64), censor_window: (f64, f64)) -> Self {
        GenConfig {
            true_params,
            n,
            trunc_window,
            censor_window,
            truncation_mode: TruncationMode::Conditional,
            seed: 0,
            fixed_uncensored: None,
        }
    }

    pub fn model(&self) -> ModelKind {
        self.true_params.model()
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.trunc_window;
        let (c, d) = self.censor_window;
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be positive".into()));
        }
        if !([a, b, c, d].iter().all(|v| v.is_finite()) && 0.0 <= a && a < b && b <= c && c < d) {
            return Err(Error::InvalidConfig(format!(
                "windows must satisfy 0 <= a < b <= c < d, got ({a}, {b}) and ({c}, {d})"
            )));
        }
        if let Some(k) = self.fixed_uncensored {
            if k > self.n {
                return Err(Error::InvalidConfig(format!("fixed_uncensored = {k} exceeds n = {}", self.n)));
            }
        }
        Ok(())
    }
}

fn open_unit(rng: &mut StreamRng) -> f64 {
    // (0, 1]
    1.0 - rng.random::<f64>()
}

fn weibull_draw(beta: f64, eta: f64, rng: &mut StreamRng) -> f64 {
    eta * (-open_unit(rng).ln()).powf(1.0 / beta)
}

/// Unconditional lifetime by inversion. GLFP lifetimes are `min(X2, X1)`
/// where the early-failure component `X1` is present with probability `pi`.
pub fn sample_lifetime(params: &ParamVector, rng: &mut StreamRng) -> f64 {
    let p = params.values();
    match params.model() {
        ModelKind::Exponential => -open_unit(rng).ln() / p[0],
        ModelKind::Weibull => weibull_draw(p[0], p[1], rng),
        ModelKind::Glfp { mixing } => {
            let x2 = weibull_draw(p[2], p[3], rng);
            if rng.random::<f64>() < mixing {
                x2.min(weibull_draw(p[0], p[1], rng))
            } else {
                x2
            }
        }
    }
}

fn uniform_in(lo: f64, hi: f64, rng: &mut StreamRng) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Truncation age and lifetime of one unit (lifetime exceeds the age).
fn truncated_lifetime(
    params: &ParamVector,
    window: (f64, f64),
    mode: TruncationMode,
    rng: &mut StreamRng,
) -> Result<(f64, f64)> {
    let mut t_trunc = uniform_in(window.0, window.1, rng);
    for _ in 0..REJECTION_BUDGET {
        let x = sample_lifetime(params, rng);
        if x > t_trunc {
            return Ok((t_trunc, x));
        }
        if mode == TruncationMode::Independent {
            t_trunc = uniform_in(window.0, window.1, rng);
        }
    }
    Err(Error::RejectionBudgetExceeded)
}

fn generate_unit(config: &GenConfig, base: &StreamRng, unit: u64) -> Result<Observation> {
    let mut rng = base.clone();
    rng.set_stream(unit);
    rng.set_word_pos(0);
    let (t_trunc, x) = truncated_lifetime(&config.true_params, config.trunc_window, config.truncation_mode, &mut rng)?;
    let z = uniform_in(config.censor_window.0, config.censor_window.1, &mut rng);
    Observation::new(x.min(z), z < x, t_trunc)
}

/// Generates a dataset from `config` (deterministic in `config.seed`).
pub fn generate(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let base = rng::stream(config.seed, &[Stage::Data as u64]);
    let n = config.n;
    let Some(k) = config.fixed_uncensored else {
        let units: Result<Vec<Observation>> =
            (0..n as u64).into_par_iter().map(|u| generate_unit(config, &base, u)).collect();
        return Ok(Dataset::new(units?));
    };

    // Class quotas: scan units in index order, keep each while its class has room.
    let (mut need_fail, mut need_cens) = (k, n - k);
    let mut kept = Vec::with_capacity(n);
    let mut next: u64 = 0;
    let budget = (REJECTION_BUDGET * n) as u64;
    while need_fail + need_cens > 0 {
        if next >= budget {
            return Err(Error::RejectionBudgetExceeded);
        }
        let batch = (need_fail + need_cens).max(1024) as u64;
        let units: Result<Vec<Observation>> =
            (next..next + batch).into_par_iter().map(|u| generate_unit(config, &base, u)).collect();
        next += batch;
        for o in units? {
            let room = if o.censored() { &mut need_cens } else { &mut need_fail };
            if *room > 0 {
                *room -= 1;
                kept.push(o);
            }
        }
    }
    Ok(Dataset::new(kept))
}

/// Finds a censoring window `(b + s, b + 2 s)` giving censoring rate
/// `target_alpha` on a 10^5-unit probe; fails if the closest window found is
/// off by more than 0.005.
///
/// The probe draws each unit's truncation age, lifetime and a uniform `V`
/// once; the censoring time is `b + s (1 + V)`, so the probe rate is monotone
/// in `s` and bisection on `ln s` is exact.
pub fn calibrate_alpha(
    true_params: &ParamVector,
    target_alpha: f64,
    trunc_window: (f64, f64),
    mode: TruncationMode,
    probe_seed: u64,
) -> Result<(f64, f64)> {
    if !(target_alpha > 0.0 && target_alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("target censoring rate must lie in (0, 1), got {target_alpha}")));
    }
    let (a, b) = trunc_window;
    if !(a.is_finite() && b.is_finite() && 0.0 <= a && a < b) {
        return Err(Error::InvalidConfig(format!("truncation window must satisfy 0 <= a < b, got ({a}, {b})")));
    }
    let base = rng::stream(probe_seed, &[Stage::Probe as u64]);
    let probe: Result<Vec<(f64, f64)>> = (0..PROBE_SIZE as u64)
        .into_par_iter()
        .map(|u| {
            let mut r = base.clone();
            r.set_stream(u);
            r.set_word_pos(0);
            let (_, x) = truncated_lifetime(true_params, trunc_window, mode, &mut r)?;
            Ok((x, r.random::<f64>()))
        })
        .collect();
    let probe = probe?;
    let alpha_at = |s: f64| {
        let censored = probe.iter().filter(|(x, v)| b + s * (1.0 + v) < *x).count();
        censored as f64 / probe.len() as f64
    };

    let scale = models::mttf(true_params)?;
    let (mut lo, mut hi) = ((1e-9 * scale).ln(), (1e9 * scale).ln());
    let (alpha_lo, alpha_hi) = (alpha_at(lo.exp()), alpha_at(hi.exp()));
    if !(alpha_lo + ALPHA_TOLERANCE >= target_alpha && alpha_hi - ALPHA_TOLERANCE <= target_alpha) {
        return Err(Error::CalibrationFailed(format!(
            "target {target_alpha} outside the reachable range [{alpha_hi}, {alpha_lo}]"
        )));
    }
    // Bisect to the probe's resolution and keep the closest window seen.
    let mut best = (f64::INFINITY, lo);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let alpha = alpha_at(mid.exp());
        let gap = (alpha - target_alpha).abs();
        if gap < best.0 {
            best = (gap, mid);
        }
        if gap < 0.5 / PROBE_SIZE as f64 {
            break;
        }
        // Censoring rate decreases in s.
        if alpha > target_alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > ALPHA_TOLERANCE {
        return Err(Error::CalibrationFailed(format!(
            "no window within ±{ALPHA_TOLERANCE} of {target_alpha} after 60 steps"
        )));
    }
    let s = best.1.exp();
    Ok((b + s, b + 2.0 * s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_config(n: usize) -> GenConfig {
        GenConfig::new(ParamVector::exponential(1.0).unwrap(), n, (0.0, 1.0), (5.0, 10.0))
    }

    #[test]
    fn same_seed_same_data() {
        let c = GenConfig { seed: 9, ..exp_config(2000) };
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let other = GenConfig { seed: 10, ..c };
        assert_ne!(generate(&c).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn invariants_hold() {
        for mode in [TruncationMode::Conditional, TruncationMode::Independent] {
            let c = GenConfig { truncation_mode: mode, ..exp_config(5000) };
            let d = generate(&c).unwrap();
            assert_eq!(d.n(), 5000);
            assert_eq!(d.n0() + d.n1(), 5000);
            assert!(d.observations().iter().all(|o| o.t() >= o.t_trunc() && o.t_trunc() < 1.0));
        }
    }

    #[test]
    fn tiny_truncation_window() {
        let c = GenConfig { trunc_window: (0.0, 1e-12), ..exp_config(500) };
        let d = generate(&c).unwrap();
        assert!(d.observations().iter().all(|o| o.t_trunc() <= 1e-12));
    }

    #[test]
    fn fixed_uncensored_quota() {
        let c = GenConfig { fixed_uncensored: Some(37), ..exp_config(3000) };
        let d = generate(&c).unwrap();
        assert_eq!((d.n(), d.n0()), (3000, 37));
    }

    #[test]
    fn window_validation() {
        let bad = GenConfig { censor_window: (0.5, 10.0), ..exp_config(10) };
        assert!(generate(&bad).is_err());
        assert!(calibrate_alpha(&ParamVector::exponential(1.0).unwrap(), 0.0, (0.0, 1.0), TruncationMode::Conditional, 1)
            .is_err());
    }

    #[test]
    fn impossible_truncation_exhausts_budget() {
        // Lifetimes around 1e-6 essentially never exceed truncation ages in (10, 11).
        let c = GenConfig::new(ParamVector::exponential(1e6).unwrap(), 3, (10.0, 11.0), (12.0, 13.0));
        assert!(matches!(generate(&c), Err(Error::RejectionBudgetExceeded)));
    }
}
