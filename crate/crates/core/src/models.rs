//! Parametric lifetime distributions: Exponential, Weibull and GLFP.
//!
//! Each model provides the log-density and log-survival function together
//! with analytic first and second derivatives with respect to its parameters.
//! Derivatives are carried around as a [`Jet`] (value, gradient, Hessian) in
//! fixed-size arrays so that likelihood sums over millions of units do not
//! allocate.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Largest parameter dimension of any supported model (GLFP).
pub const MAX_DIM: usize = 4;

/// Default GLFP mixing probability for the early-failure component.
pub const DEFAULT_GLFP_MIXING: f64 = 0.054;

/// Lifetime model family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelKind {
    Exponential,
    Weibull,
    /// Generalized limited failure population: two Weibull components with a
    /// fixed (never estimated) mixing probability for the first one.
    Glfp { mixing: f64 },
}

impl ModelKind {
    pub fn glfp() -> Self {
        ModelKind::Glfp { mixing: DEFAULT_GLFP_MIXING }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelKind::Exponential => 1,
            ModelKind::Weibull => 2,
            ModelKind::Glfp { .. } => 4,
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            ModelKind::Exponential => &["theta"],
            ModelKind::Weibull => &["beta", "eta"],
            ModelKind::Glfp { .. } => &["beta1", "eta1", "beta2", "eta2"],
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ModelKind::Exponential => "exponential",
            ModelKind::Weibull => "weibull",
            ModelKind::Glfp { .. } => "glfp",
        }
    }

    /// Replaces the GLFP mixing probability; a no-op for other models.
    pub fn with_mixing(self, mixing: f64) -> Result<Self> {
        match self {
            ModelKind::Glfp { .. } => {
                if !(mixing > 0.0 && mixing < 1.0) {
                    return Err(Error::InvalidParams(format!(
                        "GLFP mixing must lie in (0, 1), got {mixing}"
                    )));
                }
                Ok(ModelKind::Glfp { mixing })
            }
            other => Ok(other),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(ModelKind::Exponential),
            "weibull" => Ok(ModelKind::Weibull),
            "glfp" => Ok(ModelKind::glfp()),
            other => Err(Error::InvalidConfig(format!("unknown model '{other}'"))),
        }
    }
}

/// Model-tagged parameter vector with strictly positive components.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamRepr", into = "ParamRepr")]
pub struct ParamVector {
    model: ModelKind,
    values: [f64; MAX_DIM],
}

#[derive(Serialize, Deserialize)]
struct ParamRepr {
    model: ModelKind,
    values: Vec<f64>,
}

impl TryFrom<ParamRepr> for ParamVector {
    type Error = Error;
    fn try_from(r: ParamRepr) -> Result<Self> {
        ParamVector::new(r.model, &r.values)
    }
}

impl From<ParamVector> for ParamRepr {
    fn from(p: ParamVector) -> Self {
        ParamRepr { model: p.model, values: p.values().to_vec() }
    }
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:?}", self.model, self.values())
    }
}

impl ParamVector {
    pub fn new(model: ModelKind, values: &[f64]) -> Result<Self> {
        if let ModelKind::Glfp { mixing } = model {
            if !(mixing > 0.0 && mixing < 1.0) {
                return Err(Error::InvalidParams(format!("GLFP mixing must lie in (0, 1), got {mixing}")));
            }
        }
        if values.len() != model.dim() {
            return Err(Error::InvalidParams(format!(
                "{model} expects {} parameters, got {}",
                model.dim(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidParams(format!("parameters must be finite and > 0, got {v}")));
        }
        let mut arr = [0.0; MAX_DIM];
        arr[..values.len()].copy_from_slice(values);
        Ok(ParamVector { model, values: arr })
    }

    pub fn exponential(theta: f64) -> Result<Self> {
        Self::new(ModelKind::Exponential, &[theta])
    }

    pub fn weibull(beta: f64, eta: f64) -> Result<Self> {
        Self::new(ModelKind::Weibull, &[beta, eta])
    }

    pub fn glfp(mixing: f64, beta1: f64, eta1: f64, beta2: f64, eta2: f64) -> Result<Self> {
        Self::new(ModelKind::Glfp { mixing }, &[beta1, eta1, beta2, eta2])
    }

    /// All-ones starting point.
    pub fn ones(model: ModelKind) -> Self {
        let mut values = [0.0; MAX_DIM];
        values[..model.dim()].fill(1.0);
        ParamVector { model, values }
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values[..self.dim()]
    }

    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        Self::new(self.model, values)
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.values())
    }
}

/// Value, gradient and Hessian of a scalar function of the parameters.
/// Only the leading `dim x dim` block is meaningful.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Jet {
    pub value: f64,
    pub grad: [f64; MAX_DIM],
    pub hess: [[f64; MAX_DIM]; MAX_DIM],
}

impl Jet {
    pub const ZERO: Jet = Jet { value: 0.0, grad: [0.0; MAX_DIM], hess: [[0.0; MAX_DIM]; MAX_DIM] };

    pub fn gradient(&self, dim: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.grad[..dim])
    }

    pub fn hessian(&self, dim: usize) -> DMatrix<f64> {
        DMatrix::from_fn(dim, dim, |i, j| self.hess[i][j])
    }

    /// `self += w * other` over the leading `dim` block.
    pub fn add_scaled(&mut self, other: &Jet, w: f64, dim: usize) {
        self.value += w * other.value;
        for r in 0..dim {
            self.grad[r] += w * other.grad[r];
            for c in 0..dim {
                self.hess[r][c] += w * other.hess[r][c];
            }
        }
    }

    pub fn is_finite(&self, dim: usize) -> bool {
        self.value.is_finite()
            && self.grad[..dim].iter().all(|g| g.is_finite())
            && self.hess[..dim].iter().all(|row| row[..dim].iter().all(|h| h.is_finite()))
    }

    fn check_derivatives(&self, dim: usize, what: &str, t: f64) -> Result<()> {
        let ok = self.grad[..dim].iter().all(|g| g.is_finite())
            && self.hess[..dim].iter().all(|row| row[..dim].iter().all(|h| h.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::NonFiniteValue(format!("{what} derivatives at t = {t}")))
        }
    }
}

// ---------------------------------------------------------------------------
// Component formulas

fn exponential_log_pdf(theta: f64, t: f64) -> Jet {
    let mut j = Jet::ZERO;
    j.value = theta.ln() - theta * t;
    j.grad[0] = 1.0 / theta - t;
    j.hess[0][0] = -1.0 / (theta * theta);
    j
}

fn exponential_log_survival(theta: f64, t: f64) -> Jet {
    let mut j = Jet::ZERO;
    j.value = -theta * t;
    j.grad[0] = -t;
    j
}

/// Weibull log-survival `-(t/eta)^beta` and its derivatives in `(beta, eta)`.
fn weibull_log_survival(beta: f64, eta: f64, t: f64) -> Jet {
    let mut j = Jet::ZERO;
    if t == 0.0 {
        return j;
    }
    let lz = t.ln() - eta.ln();
    let zb = (beta * lz).exp();
    j.value = -zb;
    j.grad[0] = -zb * lz;
    j.grad[1] = beta * zb / eta;
    j.hess[0][0] = -zb * lz * lz;
    j.hess[0][1] = zb * (beta * lz + 1.0) / eta;
    j.hess[1][0] = j.hess[0][1];
    j.hess[1][1] = -beta * (beta + 1.0) * zb / (eta * eta);
    j
}

/// Weibull log-density. `Ok(None)` means the density is exactly zero
/// (t = 0 with beta > 1); beta < 1 at t = 0 has an infinite density.
fn weibull_log_pdf(beta: f64, eta: f64, t: f64) -> Result<Option<Jet>> {
    let mut j = Jet::ZERO;
    if t == 0.0 {
        if beta > 1.0 {
            return Ok(None);
        }
        if beta < 1.0 {
            return Err(Error::NonFiniteDensity { t });
        }
        // beta == 1: finite density 1/eta but the shape derivative diverges.
        j.value = -eta.ln();
        j.grad[0] = f64::NEG_INFINITY;
        j.grad[1] = -1.0 / eta;
        j.hess[0][0] = f64::NAN;
        j.hess[0][1] = f64::NAN;
        j.hess[1][0] = f64::NAN;
        j.hess[1][1] = 1.0 / (eta * eta);
        return Ok(Some(j));
    }
    let lz = t.ln() - eta.ln();
    let zb = (beta * lz).exp();
    j.value = beta.ln() - eta.ln() + (beta - 1.0) * lz - zb;
    j.grad[0] = 1.0 / beta + lz - zb * lz;
    j.grad[1] = beta / eta * (zb - 1.0);
    j.hess[0][0] = -1.0 / (beta * beta) - zb * lz * lz;
    j.hess[0][1] = (zb * (beta * lz + 1.0) - 1.0) / eta;
    j.hess[1][0] = j.hess[0][1];
    j.hess[1][1] = beta / (eta * eta) * (1.0 - (beta + 1.0) * zb);
    Ok(Some(j))
}

/// `log(1 - p F1) = log(1 - p + p S1)` given the log-survival jet of the
/// first component (2-dimensional).
fn log_one_minus_mixed_cdf(mixing: f64, s1: &Jet) -> Jet {
    let mut j = Jet::ZERO;
    let surv = s1.value.exp();
    let a = 1.0 - mixing * (1.0 - surv);
    j.value = (-mixing * (-s1.value.exp_m1())).ln_1p();
    let q = mixing * surv / a;
    for r in 0..2 {
        j.grad[r] = q * s1.grad[r];
        for c in 0..2 {
            j.hess[r][c] = q * s1.hess[r][c] + q * (1.0 - q) * s1.grad[r] * s1.grad[c];
        }
    }
    j
}

/// Places a 2-dimensional jet into block `offset..offset + 2` of a 4-dimensional one.
fn embed(target: &mut Jet, src: &Jet, offset: usize) {
    for r in 0..2 {
        target.grad[offset + r] += src.grad[r];
        for c in 0..2 {
            target.hess[offset + r][offset + c] += src.hess[r][c];
        }
    }
}

fn glfp_log_survival(mixing: f64, p: &[f64], t: f64) -> Jet {
    let s1 = weibull_log_survival(p[0], p[1], t);
    let s2 = weibull_log_survival(p[2], p[3], t);
    let a = log_one_minus_mixed_cdf(mixing, &s1);
    let mut j = Jet::ZERO;
    j.value = a.value + s2.value;
    embed(&mut j, &a, 0);
    embed(&mut j, &s2, 2);
    j
}

/// GLFP log-density `log[p f1 (1 - F2) + f2 (1 - p F1)]`, combined in log
/// space as a two-term log-sum-exp.
fn glfp_log_pdf(mixing: f64, p: &[f64], t: f64) -> Result<Option<Jet>> {
    let f1 = weibull_log_pdf(p[0], p[1], t)?;
    let f2 = weibull_log_pdf(p[2], p[3], t)?;
    let s1 = weibull_log_survival(p[0], p[1], t);
    let s2 = weibull_log_survival(p[2], p[3], t);
    let a = log_one_minus_mixed_cdf(mixing, &s1);

    // Early-failure term: log p + log f1 + log S2.
    let term_p = f1.map(|f1| {
        let mut j = Jet::ZERO;
        j.value = mixing.ln() + f1.value + s2.value;
        embed(&mut j, &f1, 0);
        embed(&mut j, &s2, 2);
        j
    });
    // Main term: log f2 + log(1 - p F1).
    let term_q = f2.map(|f2| {
        let mut j = Jet::ZERO;
        j.value = f2.value + a.value;
        embed(&mut j, &a, 0);
        embed(&mut j, &f2, 2);
        j
    });

    Ok(match (term_p, term_q) {
        (None, None) => None,
        (Some(j), None) | (None, Some(j)) => Some(j),
        (Some(jp), Some(jq)) => {
            let m = jp.value.max(jq.value);
            let ep = (jp.value - m).exp();
            let eq = (jq.value - m).exp();
            let total = ep + eq;
            let (wp, wq) = (ep / total, eq / total);
            let mut j = Jet::ZERO;
            j.value = m + total.ln();
            for r in 0..MAX_DIM {
                j.grad[r] = wp * jp.grad[r] + wq * jq.grad[r];
            }
            for r in 0..MAX_DIM {
                for c in 0..MAX_DIM {
                    let dr = jp.grad[r] - jq.grad[r];
                    let dc = jp.grad[c] - jq.grad[c];
                    j.hess[r][c] = wp * jp.hess[r][c] + wq * jq.hess[r][c] + wp * wq * dr * dc;
                }
            }
            Some(j)
        }
    })
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidObservation(format!("time must be finite and >= 0, got {t}")))
    }
}

/// Log-density jet; errors when the log-density is not finite.
pub(crate) fn log_pdf_jet(params: &ParamVector, t: f64) -> Result<Jet> {
    check_time(t)?;
    let p = params.values();
    let jet = match params.model() {
        ModelKind::Exponential => Some(exponential_log_pdf(p[0], t)),
        ModelKind::Weibull => weibull_log_pdf(p[0], p[1], t)?,
        ModelKind::Glfp { mixing } => glfp_log_pdf(mixing, p, t)?,
    };
    match jet {
        Some(j) if j.value.is_finite() => Ok(j),
        _ => Err(Error::NonFiniteDensity { t }),
    }
}

/// Log-survival jet; errors when `S(t)` underflows so far that the log is not finite.
pub(crate) fn log_survival_jet(params: &ParamVector, t: f64) -> Result<Jet> {
    check_time(t)?;
    let p = params.values();
    let jet = match params.model() {
        ModelKind::Exponential => exponential_log_survival(p[0], t),
        ModelKind::Weibull => weibull_log_survival(p[0], p[1], t),
        ModelKind::Glfp { mixing } => glfp_log_survival(mixing, p, t),
    };
    if jet.value.is_finite() {
        Ok(jet)
    } else {
        Err(Error::NonFiniteValue(format!("log-survival at t = {t}")))
    }
}

pub fn log_pdf(params: &ParamVector, t: f64) -> Result<f64> {
    log_pdf_jet(params, t).map(|j| j.value)
}

pub fn log_survival(params: &ParamVector, t: f64) -> Result<f64> {
    log_survival_jet(params, t).map(|j| j.value)
}

pub fn grad_log_pdf(params: &ParamVector, t: f64) -> Result<DVector<f64>> {
    let j = log_pdf_jet(params, t)?;
    j.check_derivatives(params.dim(), "log-density", t)?;
    Ok(j.gradient(params.dim()))
}

pub fn grad_log_survival(params: &ParamVector, t: f64) -> Result<DVector<f64>> {
    let j = log_survival_jet(params, t)?;
    j.check_derivatives(params.dim(), "log-survival", t)?;
    Ok(j.gradient(params.dim()))
}

pub fn hess_log_pdf(params: &ParamVector, t: f64) -> Result<DMatrix<f64>> {
    let j = log_pdf_jet(params, t)?;
    j.check_derivatives(params.dim(), "log-density", t)?;
    Ok(j.hessian(params.dim()))
}

pub fn hess_log_survival(params: &ParamVector, t: f64) -> Result<DMatrix<f64>> {
    let j = log_survival_jet(params, t)?;
    j.check_derivatives(params.dim(), "log-survival", t)?;
    Ok(j.hessian(params.dim()))
}

/// Survival function `S(t)`.
pub fn survival(params: &ParamVector, t: f64) -> Result<f64> {
    log_survival(params, t).map(f64::exp)
}

/// Mean time to failure, the integral of the survival function over `[0, inf)`.
pub fn mttf(params: &ParamVector) -> Result<f64> {
    let p = params.values();
    match params.model() {
        ModelKind::Exponential => Ok(1.0 / p[0]),
        ModelKind::Weibull => Ok(p[1] * statrs::function::gamma::gamma(1.0 + 1.0 / p[0])),
        ModelKind::Glfp { mixing } => {
            let scale = p[1].max(p[3]);
            let value = quad::integrate_half_line(
                |t| glfp_log_survival(mixing, p, t).value.exp(),
                scale,
                1e-10,
            )?;
            if value.is_finite() && value > 0.0 {
                Ok(value)
            } else {
                Err(Error::IntegrationFailure(format!("MTTF integral evaluated to {value}")))
            }
        }
    }
}
