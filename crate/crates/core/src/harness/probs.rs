//! Per-unit subsampling probabilities and their distribution.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::likelihood::Dataset;
use crate::models::ParamVector;
use crate::subsampling::{self, ProbVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbKind {
    Rds,
    Rdcs,
    Aopt,
}

impl FromStr for ProbKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rds" => Ok(ProbKind::Rds),
            "rdcs" => Ok(ProbKind::Rdcs),
            "aopt" | "a-opt" => Ok(ProbKind::Aopt),
            other => Err(Error::InvalidConfig(format!("unknown probability kind '{other}'"))),
        }
    }
}

/// Unmixed probabilities at `theta`. RDCS covers censored units only.
pub fn probabilities(dataset: &Dataset, theta: &ParamVector, kind: ProbKind) -> Result<ProbVector> {
    match kind {
        ProbKind::Rds => subsampling::rds_probs(dataset, theta),
        ProbKind::Rdcs => subsampling::rdcs_probs(dataset, theta),
        ProbKind::Aopt => subsampling::aopt_probs(dataset, theta),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub uncensored: usize,
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbHistogram {
    pub kind: ProbKind,
    pub units: usize,
    /// Units with probability exactly zero (left out of the bins).
    pub zero: usize,
    /// Median log probability of the positive entries in each group.
    pub median_uncensored: Option<f64>,
    pub median_censored: Option<f64>,
    pub bins: Vec<HistogramBin>,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let k = sorted.len();
    match k {
        0 => None,
        _ if k % 2 == 1 => Some(sorted[k / 2]),
        _ => Some(0.5 * (sorted[k / 2 - 1] + sorted[k / 2])),
    }
}

/// Equal-width histogram of `ln(prob)` over the positive entries, with
/// separate counts for uncensored and censored units.
pub fn histogram(dataset: &Dataset, probs: &ProbVector, kind: ProbKind, bins: usize) -> Result<ProbHistogram> {
    if bins == 0 {
        return Err(Error::InvalidConfig("bin count must be positive".into()));
    }
    let (mut unc, mut cen) = (Vec::new(), Vec::new());
    for (k, p) in probs.probs().iter().enumerate() {
        if *p > 0.0 {
            let group = if dataset.get(probs.dataset_index(k)).censored() { &mut cen } else { &mut unc };
            group.push(p.ln());
        }
    }
    unc.sort_by(f64::total_cmp);
    cen.sort_by(f64::total_cmp);
    let zero = probs.len() - unc.len() - cen.len();
    let lo = unc.first().into_iter().chain(cen.first()).copied().fold(f64::INFINITY, f64::min);
    let hi = unc.last().into_iter().chain(cen.last()).copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    if lo.is_finite() {
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let slot = |x: f64| (((x - lo) / width) as usize).min(bins - 1);
        out = (0..bins)
            .map(|b| HistogramBin { lo: lo + b as f64 * width, hi: lo + (b + 1) as f64 * width, uncensored: 0, censored: 0 })
            .collect();
        for &x in &unc {
            out[slot(x)].uncensored += 1;
        }
        for &x in &cen {
            out[slot(x)].censored += 1;
        }
    }
    Ok(ProbHistogram {
        kind,
        units: probs.len(),
        zero,
        median_uncensored: median(&unc),
        median_censored: median(&cen),
        bins: out,
    })
}

/// CSV of `index,censored,prob,log_prob` in dataset order.
pub fn unit_csv(dataset: &Dataset, probs: &ProbVector) -> String {
    let mut out = String::from("index,censored,prob,log_prob\n");
    for (k, p) in probs.probs().iter().enumerate() {
        let i = probs.dataset_index(k);
        let lg = if *p > 0.0 { format!("{}", p.ln()) } else { String::new() };
        let _ = writeln!(out, "{i},{},{p},{lg}", u8::from(dataset.get(i).censored()));
    }
    out
}

pub fn histogram_csv(h: &ProbHistogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,uncensored,censored\n");
    for b in &h.bins {
        let _ = writeln!(out, "{},{},{},{}", b.lo, b.hi, b.uncensored, b.censored);
    }
    out
}

/// Probabilities at `theta` as a per-unit table plus a binned histogram.
pub fn export_prob_histogram(
    dataset: &Dataset,
    theta: &ParamVector,
    kind: ProbKind,
    bins: usize,
) -> Result<(String, ProbHistogram)> {
    let probs = probabilities(dataset, theta, kind)?;
    let hist = histogram(dataset, &probs, kind, bins)?;
    Ok((unit_csv(dataset, &probs), hist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::Observation;
    use crate::subsampling::Support;

    fn units(spec: &[(f64, bool)]) -> Dataset {
        spec.iter().map(|&(t, c)| Observation::new(t, c, 0.0).unwrap()).collect()
    }

    #[test]
    fn bins_split_by_censoring() {
        let d = units(&[(1.0, false), (1.0, true), (1.0, false), (1.0, true), (1.0, true)]);
        let p = ProbVector::new(vec![0.5, 0.25, 0.125, 0.125, 0.0], Support::AllUnits).unwrap();
        let h = histogram(&d, &p, ProbKind::Rds, 3).unwrap();
        assert_eq!(h.zero, 1);
        assert_eq!(h.bins.iter().map(|b| b.uncensored + b.censored).sum::<usize>(), 4);
        assert_eq!((h.bins[0].uncensored, h.bins[0].censored), (1, 1));
        assert_eq!((h.bins[2].uncensored, h.bins[2].censored), (1, 0));
        assert_eq!(h.median_uncensored, Some(0.5 * (0.5f64.ln() + 0.125f64.ln())));
        assert_eq!(h.median_censored, Some(0.5 * (0.25f64.ln() + 0.125f64.ln())));
    }

    #[test]
    fn two_unit_rds_log_probs() {
        // Exponential at theta = 2: score norms are |1/2 - 1| and |-1|.
        let d = units(&[(1.0, false), (1.0, true)]);
        let (csv, _) = export_prob_histogram(&d, &ParamVector::exponential(2.0).unwrap(), ProbKind::Rds, 2).unwrap();
        let logs: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
        assert!((logs[0] - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((logs[1] - (2.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn rdcs_lists_censored_units_only() {
        let d = units(&[(1.0, false), (2.0, true), (3.0, true)]);
        let th = ParamVector::exponential(1.0).unwrap();
        let (csv, h) = export_prob_histogram(&d, &th, ProbKind::Rdcs, 4).unwrap();
        assert_eq!(h.units, 2);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1) == Some("1")));
    }
}
