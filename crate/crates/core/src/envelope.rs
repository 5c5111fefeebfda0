//! Moreau envelope of the lower-level objective and the penalty objective
//! built on it.
//!
//! ```text
//! V_γ(x, y) = min_θ G(x, θ) + ‖θ − y‖² / (2γ)
//! Ψ_μ(x, y) = μ F(x, y) + G(x, y) − V_γ(x, y)
//! ```
//!
//! These are oracles for measuring progress; the decentralized updates never
//! call into this module.

use serde::{Deserialize, Serialize};

use crate::error::{DsboError, Result};
use crate::linalg::{dist_sq, mean_rows, norm, norm_sq};
use crate::problems::{check_point, lower_gradient, lower_value, upper_gradient, upper_value, BilevelProblem, Gradient};
use crate::scalar::Scalar;
use crate::strategies::SwarmState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub gamma: f64,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "default_inner_max_iters")]
    pub inner_max_iters: usize,
    /// Metrics are recorded every this many iterations (and at the last one).
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_inner_tol() -> f64 {
    1e-10
}
fn default_inner_max_iters() -> usize {
    100_000
}
fn default_record_every() -> usize {
    10
}

impl EnvelopeConfig {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            inner_tol: default_inner_tol(),
            inner_max_iters: default_inner_max_iters(),
            record_every: default_record_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(DsboError::InvalidParameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.inner_tol.is_nan() || self.inner_tol <= 0.0 || self.inner_max_iters == 0 || self.record_every == 0 {
            return Err(DsboError::InvalidParameter(
                "inner_tol, inner_max_iters and record_every must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Warning text when `γ ∉ (0, 1/(2L₂))`. Outside that range the envelope is
    /// still well defined for convex `G`, but the smoothness guarantees lapse.
    pub fn gamma_range_warning<T: Scalar, P: BilevelProblem<T> + ?Sized>(&self, problem: &P) -> Option<String> {
        let bound = 0.5 / problem.l2().as_f64();
        (self.gamma >= bound).then(|| format!("gamma = {} is outside (0, 1/(2 L2)) = (0, {bound:.6})", self.gamma))
    }
}

/// Minimizer `θ*_γ(x, y)` of the proximal lower-level problem.
pub fn solve_theta_star<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T], cfg: &EnvelopeConfig) -> Result<Vec<T>> {
    solve_theta_star_from(problem, x, y, cfg, None)
}

/// [`solve_theta_star`] with an optional warm start for the iterative path.
pub fn solve_theta_star_from<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    cfg: &EnvelopeConfig,
    warm: Option<&[T]>,
) -> Result<Vec<T>> {
    cfg.validate()?;
    check_point(problem, x, y)?;
    let gamma = T::of(cfg.gamma);
    if let Some(theta) = problem.prox_lower(x, y, gamma) {
        return Ok(theta);
    }
    let inv_g = T::one() / gamma;
    let step = T::one() / (problem.l2() + inv_g);
    let tol = T::of(cfg.inner_tol);
    let mut theta = warm.map_or_else(|| y.to_vec(), <[T]>::to_vec);
    let mut residual = T::infinity();
    for _ in 0..cfg.inner_max_iters {
        let r = prox_residual(problem, x, y, &theta, inv_g);
        residual = norm(&r);
        if residual <= tol {
            return Ok(theta);
        }
        for (t, ri) in theta.iter_mut().zip(&r) {
            *t -= step * *ri;
        }
    }
    let r = prox_residual(problem, x, y, &theta, inv_g);
    let last = norm(&r);
    if last <= tol {
        return Ok(theta);
    }
    Err(DsboError::InnerSolveFailed {
        residual: last.min(residual).as_f64(),
        iterations: cfg.inner_max_iters,
    })
}

/// `∇_y G(x, θ) + (θ − y)/γ`
fn prox_residual<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T], theta: &[T], inv_g: T) -> Vec<T> {
    let g = lower_gradient(problem, x, theta);
    g.gy.iter()
        .zip(theta)
        .zip(y)
        .map(|((&gy, &t), &yi)| gy + (t - yi) * inv_g)
        .collect()
}

/// Norm of the optimality residual at `θ`; zero exactly at `θ*`.
pub fn theta_residual<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T], theta: &[T], gamma: f64) -> T {
    norm(&prox_residual(problem, x, y, theta, T::one() / T::of(gamma)))
}

pub fn moreau_value<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T], cfg: &EnvelopeConfig) -> Result<T> {
    let theta = solve_theta_star(problem, x, y, cfg)?;
    Ok(moreau_value_at(problem, x, y, &theta, cfg.gamma))
}

fn moreau_value_at<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T], theta: &[T], gamma: f64) -> T {
    lower_value(problem, x, theta) + dist_sq(theta, y) / T::of(2.0 * gamma)
}

/// `∇V_γ = (∇_x G(x, θ*), (y − θ*)/γ)`
pub fn grad_moreau<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T], cfg: &EnvelopeConfig) -> Result<Gradient<T>> {
    let theta = solve_theta_star(problem, x, y, cfg)?;
    Ok(grad_moreau_at(problem, x, y, &theta, cfg.gamma))
}

fn grad_moreau_at<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T], theta: &[T], gamma: f64) -> Gradient<T> {
    let inv_g = T::one() / T::of(gamma);
    let gx = lower_gradient(problem, x, theta).gx;
    let gy = y.iter().zip(theta).map(|(&yi, &t)| (yi - t) * inv_g).collect();
    Gradient { gx, gy }
}

fn check_mu(mu: f64) -> Result<()> {
    if mu < 0.0 || !mu.is_finite() {
        return Err(DsboError::InvalidParameter(format!("mu must be nonnegative, got {mu}")));
    }
    Ok(())
}

/// `Ψ_μ(x, y) = μF + G − V_γ`
pub fn psi_value<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T], mu: f64, cfg: &EnvelopeConfig) -> Result<T> {
    check_mu(mu)?;
    let v = moreau_value(problem, x, y, cfg)?;
    Ok(T::of(mu) * upper_value(problem, x, y) + lower_value(problem, x, y) - v)
}

/// `∇Ψ_μ = μ∇F + ∇G − ∇V_γ`. The constant `F̲` shift never enters.
pub fn grad_psi<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    mu: f64,
    cfg: &EnvelopeConfig,
) -> Result<Gradient<T>> {
    check_mu(mu)?;
    let theta = solve_theta_star(problem, x, y, cfg)?;
    Ok(grad_psi_at(problem, x, y, &theta, mu, cfg.gamma))
}

fn grad_psi_at<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T], theta: &[T], mu: f64, gamma: f64) -> Gradient<T> {
    let mut g = lower_gradient(problem, x, y);
    g.add_scaled(T::of(mu), &upper_gradient(problem, x, y));
    g.add_scaled(-T::one(), &grad_moreau_at(problem, x, y, theta, gamma));
    g
}

/// Progress measures at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityRecord {
    /// `‖∇Ψ_μ(x̄, ȳ)‖²`
    pub grad_psi_sq: f64,
    pub consensus_x: f64,
    pub consensus_y: f64,
    pub consensus_theta: f64,
    /// Sum of the three consensus errors.
    pub consensus_total: f64,
    pub mu: f64,
}

/// Stationarity at the swarm average plus per-block consensus errors
/// `(1/n)Σ_i‖v_i − v̄‖²`.
pub fn metrics<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    swarm: &SwarmState<T>,
    mu: f64,
    cfg: &EnvelopeConfig,
) -> Result<StationarityRecord> {
    metrics_with_warm_start(problem, swarm, mu, cfg, None).map(|(r, _)| r)
}

/// [`metrics`] that also returns `θ*(x̄, ȳ)` so a caller can warm-start the
/// next evaluation.
pub fn metrics_with_warm_start<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    swarm: &SwarmState<T>,
    mu: f64,
    cfg: &EnvelopeConfig,
    warm: Option<&[T]>,
) -> Result<(StationarityRecord, Vec<T>)> {
    if swarm.n_agents() == 0 {
        return Err(DsboError::InvalidInput("empty swarm".into()));
    }
    check_mu(mu)?;
    let (xbar, ybar) = (mean_rows(&swarm.vars.x), mean_rows(&swarm.vars.y));
    let theta = solve_theta_star_from(problem, &xbar, &ybar, cfg, warm)?;
    let g = grad_psi_at(problem, &xbar, &ybar, &theta, mu, cfg.gamma);
    let cx = crate::linalg::deviation_energy(&swarm.vars.x).as_f64();
    let cy = crate::linalg::deviation_energy(&swarm.vars.y).as_f64();
    let ct = crate::linalg::deviation_energy(&swarm.vars.theta).as_f64();
    let record = StationarityRecord {
        grad_psi_sq: (norm_sq(&g.gx) + norm_sq(&g.gy)).as_f64(),
        consensus_x: cx,
        consensus_y: cy,
        consensus_theta: ct,
        consensus_total: cx + cy + ct,
        mu,
    };
    Ok((record, theta))
}

/// Largest observed ratio `‖θ*(p) − θ*(p′)‖ / ‖p − p′‖` over random pairs
/// drawn from a box of half-width `radius`.
pub fn fit_theta_lipschitz<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    cfg: &EnvelopeConfig,
    pairs: usize,
    radius: f64,
    seed: u64,
) -> Result<T> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = problem.dims();
    let mut draw = |len: usize| -> Vec<T> { (0..len).map(|_| T::of(rng.random_range(-radius..=radius))).collect() };
    let mut best = T::zero();
    for _ in 0..pairs {
        let (x1, y1, x2, y2) = (draw(d.dx), draw(d.dy), draw(d.dx), draw(d.dy));
        let t1 = solve_theta_star(problem, &x1, &y1, cfg)?;
        let t2 = solve_theta_star(problem, &x2, &y2, cfg)?;
        let den = (dist_sq(&x1, &x2) + dist_sq(&y1, &y2)).sqrt();
        if den > T::zero() {
            best = best.max(dist_sq(&t1, &t2).sqrt() / den);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{Dims, QuadraticToy};

    /// `G(x, y) = ½y²` with no prox shortcut, so the iterative solver runs.
    struct HalfSquare;

    impl BilevelProblem<f64> for HalfSquare {
        fn n_agents(&self) -> usize {
            1
        }
        fn dims(&self) -> Dims {
            Dims { dx: 1, dy: 1 }
        }
        fn l1(&self) -> f64 {
            1.0
        }
        fn l2(&self) -> f64 {
            1.0
        }
        fn f_value(&self, _: usize, _: &[f64], _: &[f64]) -> f64 {
            0.0
        }
        fn g_value(&self, _: usize, _: &[f64], y: &[f64]) -> f64 {
            0.5 * y[0] * y[0]
        }
        fn f_gradient(&self, _: usize, _: &[f64], _: &[f64]) -> Gradient<f64> {
            Gradient {
                gx: vec![0.0],
                gy: vec![0.0],
            }
        }
        fn g_gradient(&self, _: usize, _: &[f64], y: &[f64]) -> Gradient<f64> {
            Gradient {
                gx: vec![0.0],
                gy: vec![y[0]],
            }
        }
    }

    /// [`HalfSquare`] with an overstated smoothness bound, so the inner solver
    /// needs many steps.
    struct LooseHalfSquare;

    impl BilevelProblem<f64> for LooseHalfSquare {
        fn n_agents(&self) -> usize {
            1
        }
        fn dims(&self) -> Dims {
            Dims { dx: 1, dy: 1 }
        }
        fn l1(&self) -> f64 {
            1.0
        }
        fn l2(&self) -> f64 {
            20.0
        }
        fn f_value(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
            HalfSquare.f_value(i, x, y)
        }
        fn g_value(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
            HalfSquare.g_value(i, x, y)
        }
        fn f_gradient(&self, i: usize, x: &[f64], y: &[f64]) -> Gradient<f64> {
            HalfSquare.f_gradient(i, x, y)
        }
        fn g_gradient(&self, i: usize, x: &[f64], y: &[f64]) -> Gradient<f64> {
            HalfSquare.g_gradient(i, x, y)
        }
    }

    #[test]
    fn scalar_theta_star() {
        let cfg = EnvelopeConfig::new(0.25);
        let theta = solve_theta_star(&HalfSquare, &[0.0], &[1.0], &cfg).unwrap();
        assert!((theta[0] - 0.8).abs() < 1e-10);
    }

    #[test]
    fn scalar_moreau_value_and_gradient() {
        let cfg = EnvelopeConfig::new(0.25);
        let v = moreau_value(&HalfSquare, &[0.0], &[1.0], &cfg).unwrap();
        assert!((v - 0.4).abs() < 1e-10);
        assert!((0.5 - v - 0.1).abs() < 1e-10);
        let g = grad_moreau(&HalfSquare, &[0.0], &[1.0], &cfg).unwrap();
        assert!((g.gy[0] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn stationary_point_is_its_own_prox() {
        let cfg = EnvelopeConfig::new(0.25);
        let theta = solve_theta_star(&HalfSquare, &[3.0], &[0.0], &cfg).unwrap();
        assert_eq!(theta, vec![0.0]);
        let g = grad_moreau(&HalfSquare, &[3.0], &[0.0], &cfg).unwrap();
        assert_eq!(g.gy, vec![0.0]);
        assert_eq!(moreau_value(&HalfSquare, &[3.0], &[0.0], &cfg).unwrap(), 0.0);
    }

    #[test]
    fn inner_solve_failure_carries_residual() {
        let cfg = EnvelopeConfig {
            inner_max_iters: 2,
            inner_tol: 1e-14,
            ..EnvelopeConfig::new(0.25)
        };
        match solve_theta_star(&LooseHalfSquare, &[0.0], &[1.0], &cfg) {
            Err(DsboError::InnerSolveFailed { residual, iterations }) => {
                assert!(residual > 0.0);
                assert_eq!(iterations, 2);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn toy_closed_form_residual() {
        let toy = QuadraticToy::<f64>::published(5, 10);
        let cfg = EnvelopeConfig::new(0.2);
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..20).map(|i| (i as f64 * 0.11).cos()).collect();
        let theta = solve_theta_star(&toy, &x, &y, &cfg).unwrap();
        assert!(theta_residual(&toy, &x, &y, &theta, cfg.gamma) <= 1e-10);
    }

    #[test]
    fn psi_gradient_vanishes_at_lower_stationary_point_with_zero_mu() {
        let toy = QuadraticToy::<f64>::published(5, 3);
        let cfg = EnvelopeConfig::new(0.2);
        let x = vec![1.0, -0.5, 2.0];
        let c = toy.lower_slope();
        let mut y: Vec<f64> = x.iter().map(|v| c * v).collect();
        y.extend([0.1, 0.2, 0.3]);
        let g = grad_psi(&toy, &x, &y, 0.0, &cfg).unwrap();
        assert!(g.norm_sq() < 1e-24);
    }

    #[test]
    fn negative_mu_rejected() {
        let toy = QuadraticToy::<f64>::published(2, 1);
        assert!(psi_value(&toy, &[0.0], &[0.0, 0.0], -1.0, &EnvelopeConfig::new(0.1)).is_err());
    }

    #[test]
    fn gamma_warning() {
        let toy = QuadraticToy::<f64>::published(5, 10);
        assert!(EnvelopeConfig::new(10.0).gamma_range_warning(&toy).is_some());
        let ok = 0.25 / toy.l2();
        assert!(EnvelopeConfig::new(ok).gamma_range_warning(&toy).is_none());
    }

    #[test]
    fn lipschitz_fit_is_finite() {
        let toy = QuadraticToy::<f64>::published(5, 2);
        let l = fit_theta_lipschitz(&toy, &EnvelopeConfig::new(0.2), 200, 3.0, 1).unwrap();
        assert!(l.is_finite() && l > 0.0);
        // θ₁ = (ā x + y₁/γ)/(β + 1/γ): its Jacobian norm is bounded by the row norm
        assert!(l <= 1.0 + 1e-12);
    }
}
