//! Per-agent descent directions, penalty/step schedules, and the momentum
//! and STORM estimators layered on top of raw mini-batch directions.

use serde::{Deserialize, Serialize};

use crate::block::{Block, Triple};
use crate::error::{DsboError, Result};
use crate::linalg::all_finite;
use crate::problems::{check_point, BilevelProblem, Gradient, NoiseModel};
use crate::rng::SampleKeys;
use crate::scalar::Scalar;

/// `(D_θ, D_x, D_y)` for one agent.
pub type DirectionTriple<T> = Triple<Vec<T>>;

fn check_state<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, agent: usize, x: &[T], y: &[T], theta: &[T]) -> Result<()> {
    check_point(problem, x, y)?;
    if theta.len() != y.len() {
        return Err(DsboError::InvalidInput(format!(
            "theta has dimension {}, expected {}",
            theta.len(),
            y.len()
        )));
    }
    if agent >= problem.n_agents() {
        return Err(DsboError::InvalidInput(format!("agent {agent} out of range")));
    }
    Ok(())
}

/// Assemble the triple from the gradients of `f_i` at `(x,y)` and `g_i` at
/// `(x,y)` and `(x,θ)`.
fn assemble<T: Scalar>(
    f_xy: &Gradient<T>,
    g_xy: &Gradient<T>,
    g_xt: &Gradient<T>,
    y: &[T],
    theta: &[T],
    mu: f64,
    gamma: f64,
) -> DirectionTriple<T> {
    let mu = T::of(mu);
    let inv_g = T::one() / T::of(gamma);
    let d_theta = g_xt
        .gy
        .iter()
        .zip(theta.iter().zip(y))
        .map(|(&g, (&t, &yi))| g + (t - yi) * inv_g)
        .collect();
    let d_x = f_xy
        .gx
        .iter()
        .zip(g_xy.gx.iter().zip(&g_xt.gx))
        .map(|(&f, (&gy, &gt))| mu * f + gy - gt)
        .collect();
    let d_y = f_xy
        .gy
        .iter()
        .zip(g_xy.gy.iter().zip(y.iter().zip(theta)))
        .map(|(&f, (&g, (&yi, &t)))| mu * f + g - (yi - t) * inv_g)
        .collect();
    Triple::new(d_theta, d_x, d_y)
}

/// ```text
/// D_θ = ∇_y g_i(x,θ) + (θ − y)/γ
/// D_x = μ∇_x f_i(x,y) + ∇_x g_i(x,y) − ∇_x g_i(x,θ)
/// D_y = μ∇_y f_i(x,y) + ∇_y g_i(x,y) − (y − θ)/γ
/// ```
#[allow(clippy::too_many_arguments)]
pub fn deterministic_directions<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    agent: usize,
    x: &[T],
    y: &[T],
    theta: &[T],
    mu: f64,
    gamma: f64,
) -> Result<DirectionTriple<T>> {
    check_state(problem, agent, x, y, theta)?;
    let f_xy = problem.f_gradient(agent, x, y);
    let g_xy = problem.g_gradient(agent, x, y);
    let g_xt = problem.g_gradient(agent, x, theta);
    Ok(assemble(&f_xy, &g_xy, &g_xt, y, theta, mu, gamma))
}

/// Sampled counterpart of [`deterministic_directions`]. All three lower-level
/// gradients use the one sample `keys.g`.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_directions<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    agent: usize,
    x: &[T],
    y: &[T],
    theta: &[T],
    mu: f64,
    gamma: f64,
    noise: &NoiseModel,
    keys: &SampleKeys,
) -> Result<DirectionTriple<T>> {
    check_state(problem, agent, x, y, theta)?;
    let f_xy = problem.f_gradient_sample(agent, x, y, noise, &keys.f);
    let g_xy = problem.g_gradient_sample(agent, x, y, noise, &keys.g);
    let g_xt = problem.g_gradient_sample(agent, x, theta, noise, &keys.g);
    let d = assemble(&f_xy, &g_xy, &g_xt, y, theta, mu, gamma);
    if !(all_finite(&d.theta) && all_finite(&d.x) && all_finite(&d.y)) {
        return Err(DsboError::InvalidInput(format!("non-finite direction for agent {agent}")));
    }
    Ok(d)
}

/// Fixed step sizes that bypass the horizon-based schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub theta: f64,
    pub x: f64,
    pub y: f64,
}

/// Penalty sequence `μ_k = μ0 (k+1)^{−p}` and step sizes
/// `λ_θ = c_θ √n / √K`, `λ_x = λ_y = c_λ λ_θ` unless overridden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedules {
    pub mu0: f64,
    #[serde(default)]
    pub p: f64,
    #[serde(default = "one")]
    pub c_theta: f64,
    #[serde(default = "one")]
    pub c_lambda: f64,
    /// Horizon, also the number of iterations a run executes.
    #[serde(rename = "K")]
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_y: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Schedules {
    pub fn horizon_scaled(mu0: f64, p: f64, c_theta: f64, c_lambda: f64, horizon: usize) -> Self {
        Self {
            mu0,
            p,
            c_theta,
            c_lambda,
            horizon,
            lambda_theta: None,
            lambda_x: None,
            lambda_y: None,
        }
    }

    pub fn fixed_steps(mu0: f64, p: f64, steps: StepSizes, horizon: usize) -> Self {
        Self {
            lambda_theta: Some(steps.theta),
            lambda_x: Some(steps.x),
            lambda_y: Some(steps.y),
            ..Self::horizon_scaled(mu0, p, 1.0, 1.0, horizon)
        }
    }

    pub fn override_steps(&self) -> Option<StepSizes> {
        match (self.lambda_theta, self.lambda_x, self.lambda_y) {
            (Some(theta), Some(x), Some(y)) => Some(StepSizes { theta, x, y }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu0.is_nan() || self.mu0 <= 0.0 {
            return Err(DsboError::InvalidParameter(format!("mu0 must be positive, got {}", self.mu0)));
        }
        if !(0.0..0.25).contains(&self.p) {
            return Err(DsboError::InvalidParameter(format!("p must lie in [0, 1/4), got {}", self.p)));
        }
        if self.horizon == 0 {
            return Err(DsboError::InvalidParameter("K must be at least 1".into()));
        }
        let partial = [self.lambda_theta, self.lambda_x, self.lambda_y]
            .iter()
            .filter(|v| v.is_some())
            .count();
        if partial != 0 && partial != 3 {
            return Err(DsboError::InvalidParameter(
                "lambda_theta, lambda_x and lambda_y must be overridden together".into(),
            ));
        }
        match self.override_steps() {
            Some(s) if !(s.theta >= 0.0 && s.x >= 0.0 && s.y >= 0.0) => {
                Err(DsboError::InvalidParameter("step sizes must be nonnegative".into()))
            }
            None if !(self.c_theta > 0.0 && self.c_lambda > 0.0) => {
                Err(DsboError::InvalidParameter("c_theta and c_lambda must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn mu_at(&self, k: usize) -> f64 {
        self.mu0 * ((k + 1) as f64).powf(-self.p)
    }

    pub fn steps_at(&self, _k: usize, n: usize) -> StepSizes {
        if let Some(s) = self.override_steps() {
            return s;
        }
        let theta = self.c_theta * (n as f64).sqrt() / (self.horizon as f64).sqrt();
        StepSizes {
            theta,
            x: self.c_lambda * theta,
            y: self.c_lambda * theta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Minibatch,
    Momentum,
    Storm,
}

/// Averaging coefficient schedule `ρ^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSchedule {
    Constant(f64),
    /// `min(1, c / (k+1)^power)`
    Decay {
        c: f64,
        power: f64,
    },
}

impl RhoSchedule {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            RhoSchedule::Constant(r) => r,
            RhoSchedule::Decay { c, power } => (c / ((k + 1) as f64).powf(power)).min(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    #[serde(default)]
    pub kind: EstimatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<RhoSchedule>,
}

impl EstimatorSpec {
    /// Momentum defaults to a constant 0.2; STORM to `min(1, (k+1)^{-2/3})`.
    pub fn rho_schedule(&self) -> RhoSchedule {
        self.rho.unwrap_or(match self.kind {
            EstimatorKind::Minibatch => RhoSchedule::Constant(1.0),
            EstimatorKind::Momentum => RhoSchedule::Constant(0.2),
            EstimatorKind::Storm => RhoSchedule::Decay { c: 1.0, power: 2.0 / 3.0 },
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.rho_schedule() {
            RhoSchedule::Constant(r) => r > 0.0 && r <= 1.0,
            RhoSchedule::Decay { c, power } => c > 0.0 && power >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(DsboError::InvalidParameter("estimator rho must lie in (0, 1]".into()))
        }
    }
}

/// Per-agent estimator memory.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState<T> {
    pub kind: EstimatorKind,
    /// Coefficients `ρ` for the `(θ, x, y)` blocks.
    pub rho: Triple<T>,
    pub prev_estimate: Option<DirectionTriple<T>>,
    /// Previous raw direction (STORM).
    pub prev_raw: Option<DirectionTriple<T>>,
}

impl<T: Scalar> EstimatorState<T> {
    pub fn new(kind: EstimatorKind, rho: T) -> Self {
        Self {
            kind,
            rho: Triple::splat(rho),
            prev_estimate: None,
            prev_raw: None,
        }
    }

    /// Whether the next call needs the raw direction re-evaluated at the
    /// previous iterate.
    pub fn needs_reeval(&self) -> bool {
        self.kind == EstimatorKind::Storm && self.prev_estimate.is_some()
    }

    pub fn reset(&mut self) {
        self.prev_estimate = None;
        self.prev_raw = None;
    }

    /// Fold a new raw direction into the estimate.
    ///
    /// ```text
    /// momentum: D̂ = (1−ρ) D̂_prev + ρ D̆
    /// storm:    D̂ = (1−ρ)(D̂_prev + D̆ − D̆_prev@current sample) + ρ D̆
    /// ```
    ///
    /// The first call of either returns `raw` unchanged.
    pub fn apply(&mut self, raw: DirectionTriple<T>, reeval: Option<&DirectionTriple<T>>) -> Result<DirectionTriple<T>> {
        let estimate = match (self.kind, self.prev_estimate.as_ref()) {
            (EstimatorKind::Minibatch, _) | (_, None) => raw.clone(),
            (EstimatorKind::Momentum, Some(prev)) => Triple::new((), (), ()).map(|b, _| {
                let r = *self.rho.get(b);
                combine(r, prev.get(b), raw.get(b), None)
            }),
            (EstimatorKind::Storm, Some(prev)) => {
                let reeval = reeval.ok_or(DsboError::MissingReeval)?;
                Triple::new((), (), ()).map(|b, _| {
                    let r = *self.rho.get(b);
                    combine(r, prev.get(b), raw.get(b), Some(reeval.get(b)))
                })
            }
        };
        if self.kind != EstimatorKind::Minibatch {
            self.prev_estimate = Some(estimate.clone());
        }
        if self.kind == EstimatorKind::Storm {
            self.prev_raw = Some(raw);
        }
        Ok(estimate)
    }
}

fn combine<T: Scalar>(rho: T, prev: &[T], raw: &[T], reeval: Option<&Vec<T>>) -> Vec<T> {
    let keep = T::one() - rho;
    match reeval {
        None => prev.iter().zip(raw).map(|(&p, &r)| keep * p + rho * r).collect(),
        Some(old) => prev
            .iter()
            .zip(raw.iter().zip(old))
            .map(|(&p, (&r, &o))| keep * (p + r - o) + rho * r)
            .collect(),
    }
}

/// Stateless form of [`EstimatorState::apply`].
pub fn apply_estimator<T: Scalar>(
    state: &EstimatorState<T>,
    raw: DirectionTriple<T>,
    reeval: Option<&DirectionTriple<T>>,
) -> Result<(DirectionTriple<T>, EstimatorState<T>)> {
    let mut next = state.clone();
    let estimate = next.apply(raw, reeval)?;
    Ok((estimate, next))
}

impl Block {
    /// Step size for this block.
    pub fn step(self, s: &StepSizes) -> f64 {
        match self {
            Block::Theta => s.theta,
            Block::X => s.x,
            Block::Y => s.y,
        }
    }
}
