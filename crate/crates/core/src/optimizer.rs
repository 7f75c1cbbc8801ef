//! Safeguarded Newton maximization in log-parameter space.
//!
//! Iterates on `phi = ln(theta)` so every iterate stays strictly positive.
//! With `g`, `H` the gradient and Hessian in `theta`,
//!
//! ```text
//! g_phi = theta * g
//! H_phi = diag(theta) H diag(theta) + diag(theta * g)
//! ```
//!
//! Each step solves `(-H_phi + mu I) d = g_phi` by Cholesky, increasing the
//! shift `mu` when `-H_phi` is not positive definite and falling back to
//! steepest ascent when no shift works. Steps are backtracked until the
//! Armijo condition holds.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParamVector;

/// Objective value with gradient and Hessian in the natural parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// A twice-differentiable function of the model parameters to be maximized.
pub trait Objective {
    fn value(&self, params: &ParamVector) -> Result<f64>;
    fn evaluate(&self, params: &ParamVector) -> Result<Evaluation>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Tolerance on the max-norm of the gradient in log-parameter space.
    pub grad_tol: f64,
    pub step_shrink: f64,
    pub min_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { max_iters: 100, grad_tol: 1e-8, step_shrink: 0.5, min_step: 1e-12 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("grad_tol must be positive, got {}", self.grad_tol)));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::InvalidConfig(format!("step_shrink must lie in (0, 1), got {}", self.step_shrink)));
        }
        if !(self.min_step > 0.0 && self.min_step < 1.0) {
            return Err(Error::InvalidConfig(format!("min_step must lie in (0, 1), got {}", self.min_step)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub theta_hat: ParamVector,
    pub iterations: usize,
    pub converged: bool,
    pub final_grad_norm: f64,
    pub final_value: f64,
}

// Largest change of any log-parameter in one step (a factor of e^3 ~ 20).
const MAX_LOG_STEP: f64 = 3.0;
const ARMIJO: f64 = 1e-4;

struct State {
    theta: ParamVector,
    phi: DVector<f64>,
    value: f64,
    g_phi: DVector<f64>,
    h_phi: DMatrix<f64>,
}

impl State {
    fn at(objective: &dyn Objective, theta: ParamVector) -> Result<Self> {
        let ev = objective.evaluate(&theta)?;
        if !ev.value.is_finite() {
            return Err(Error::NonFiniteValue("objective value".into()));
        }
        let th = theta.to_dvector();
        let d = th.len();
        let g_phi = th.component_mul(&ev.gradient);
        let mut h_phi = DMatrix::from_fn(d, d, |i, j| th[i] * ev.hessian[(i, j)] * th[j]);
        for i in 0..d {
            h_phi[(i, i)] += g_phi[i];
        }
        if !(g_phi.iter().all(|v| v.is_finite()) && h_phi.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFiniteValue("objective derivatives".into()));
        }
        let phi = th.map(f64::ln);
        Ok(State { theta, phi, value: ev.value, g_phi, h_phi })
    }

    fn grad_norm(&self) -> f64 {
        self.g_phi.amax()
    }
}

fn newton_direction(state: &State) -> Option<DVector<f64>> {
    let neg_h = -&state.h_phi;
    Cholesky::new(neg_h).map(|c| c.solve(&state.g_phi))
}

/// Newton direction with a Levenberg shift, or steepest ascent as a last resort.
fn search_direction(state: &State) -> DVector<f64> {
    if let Some(d) = newton_direction(state) {
        return d;
    }
    let d = state.phi.len();
    let scale = (0..d).map(|i| state.h_phi[(i, i)].abs()).fold(1.0, f64::max);
    let mut mu = 1e-8 * scale;
    while mu <= 1e8 * scale {
        let shifted = -&state.h_phi + DMatrix::identity(d, d) * mu;
        if let Some(c) = Cholesky::new(shifted) {
            return c.solve(&state.g_phi);
        }
        mu *= 10.0;
    }
    let g = &state.g_phi;
    g / g.amax().max(1.0)
}

fn cap_step(mut d: DVector<f64>) -> DVector<f64> {
    let big = d.amax();
    if big > MAX_LOG_STEP {
        d *= MAX_LOG_STEP / big;
    }
    d
}

fn theta_from_phi(template: &ParamVector, phi: &DVector<f64>) -> Option<ParamVector> {
    let vals: Vec<f64> = phi.iter().map(|p| p.exp()).collect();
    template.with_values(&vals).ok()
}

/// Backtracking line search along `d`; returns the accepted state.
fn line_search(objective: &dyn Objective, state: &State, d: &DVector<f64>, config: &OptimizerConfig) -> Option<State> {
    let slope = state.g_phi.dot(d);
    let mut step = 1.0;
    while step >= config.min_step {
        let phi = &state.phi + d * step;
        if let Some(theta) = theta_from_phi(&state.theta, &phi) {
            if let Ok(v) = objective.value(&theta) {
                if v.is_finite() && v >= state.value + ARMIJO * step * slope {
                    if let Ok(next) = State::at(objective, theta) {
                        if next.value >= state.value {
                            return Some(next);
                        }
                    }
                }
            }
        }
        step *= config.step_shrink;
    }
    None
}

/// Extra unshifted Newton steps once the tolerance is met. A step is kept
/// when it lowers the gradient norm and the objective does not drop by more
/// than rounding noise, since near the optimum the gain is below resolution.
fn polish(objective: &dyn Objective, mut state: State) -> State {
    for _ in 0..3 {
        let Some(d) = newton_direction(&state) else { break };
        let phi = &state.phi + cap_step(d);
        let Some(theta) = theta_from_phi(&state.theta, &phi) else { break };
        let noise = 16.0 * f64::EPSILON * state.value.abs().max(1.0);
        match State::at(objective, theta) {
            Ok(next) if next.value >= state.value - noise && next.grad_norm() < state.grad_norm() => state = next,
            _ => break,
        }
    }
    state
}

/// Maximizes `objective` starting from `start`. Running out of iterations or
/// failing the line search is not an error: the best iterate is returned with
/// `converged = false`.
pub fn maximize(objective: &dyn Objective, start: ParamVector, config: &OptimizerConfig) -> Result<OptimResult> {
    config.validate()?;
    let mut state = State::at(objective, start).map_err(|_| Error::ObjectiveNonFiniteAtStart)?;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        if state.grad_norm() <= config.grad_tol {
            state = polish(objective, state);
            converged = true;
            break;
        }
        if iterations >= config.max_iters {
            break;
        }
        let d = cap_step(search_direction(&state));
        match line_search(objective, &state, &d, config) {
            Some(next) => state = next,
            None => {
                // Newton may fail when only rounding noise is left; try steepest ascent once.
                let g = cap_step(state.g_phi.clone() / state.g_phi.amax().max(1.0));
                match line_search(objective, &state, &g, config) {
                    Some(next) => state = next,
                    None => break,
                }
            }
        }
        iterations += 1;
    }
    Ok(OptimResult {
        theta_hat: state.theta,
        iterations,
        converged,
        final_grad_norm: state.grad_norm(),
        final_value: state.value,
    })
}
