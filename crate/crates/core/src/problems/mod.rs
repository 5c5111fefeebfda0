//! Per-agent bilevel objectives and their gradient oracles.
//!
//! Agent `i` holds an upper objective `f_i(x, y)` and a lower objective
//! `g_i(x, y)`; the network objectives are the agent averages `F` and `G`.
//! Agents are indexed from zero everywhere in the public API.

mod logistic;
mod toy;

pub use logistic::{generate_logistic_data, AgentData, Dataset, LogisticData, LogisticHyperopt, LogisticParams};
pub use toy::{QuadraticToy, ToyReference, PUBLISHED_TOY_TRIPLE};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DsboError, Result};
use crate::linalg::{axpy, concat, dist_sq, mean_rows, norm_sq};
use crate::rng::DrawKey;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub dx: usize,
    pub dy: usize,
}

/// Partial gradients `(∇_x, ∇_y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub gx: Vec<T>,
    pub gy: Vec<T>,
}

impl<T: Scalar> Gradient<T> {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            gx: vec![T::zero(); dims.dx],
            gy: vec![T::zero(); dims.dy],
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        concat(&self.gx, &self.gy)
    }

    pub fn norm_sq(&self) -> T {
        norm_sq(&self.gx) + norm_sq(&self.gy)
    }

    pub fn add_scaled(&mut self, alpha: T, other: &Gradient<T>) {
        axpy(alpha, &other.gx, &mut self.gx);
        axpy(alpha, &other.gy, &mut self.gy);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Deterministic gradient plus a zero-mean Gaussian vector.
    #[default]
    AdditiveGaussian,
    /// Gradient of a uniformly drawn mini-batch (data-backed instances only).
    Minibatch,
}

/// Stochastic oracle model. `delta_f` and `delta_g` bound the standard
/// deviation of the whole gradient vector: `E‖noise‖² = δ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    #[serde(default)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub delta_f: f64,
    #[serde(default)]
    pub delta_g: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_batch_size() -> usize {
    32
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::noiseless()
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            kind: NoiseKind::AdditiveGaussian,
            delta_f: 0.0,
            delta_g: 0.0,
            batch_size: default_batch_size(),
        }
    }

    pub fn gaussian(delta_f: f64, delta_g: f64) -> Self {
        Self {
            kind: NoiseKind::AdditiveGaussian,
            delta_f,
            delta_g,
            batch_size: default_batch_size(),
        }
    }

    pub fn minibatch(batch_size: usize) -> Self {
        Self {
            kind: NoiseKind::Minibatch,
            delta_f: 0.0,
            delta_g: 0.0,
            batch_size,
        }
    }
}

/// Perturb `grad` with an isotropic Gaussian vector of total variance `delta²`.
/// The perturbation depends only on `key`, so two evaluations with the same
/// sample receive the same noise.
pub fn add_gaussian_noise<T: Scalar>(grad: &mut Gradient<T>, delta: f64, key: &DrawKey) {
    if delta == 0.0 {
        return;
    }
    let d = grad.gx.len() + grad.gy.len();
    let sd = delta / (d as f64).sqrt();
    let mut rng = key.rng();
    for v in grad.gx.iter_mut().chain(grad.gy.iter_mut()) {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += T::of(sd * z);
    }
}

/// A decentralized bilevel problem: `n` agents, each with `(f_i, g_i)`.
///
/// The value and gradient methods do not check dimensions; the free functions
/// in this module ([`grad_f`], [`grad_g`], ...) do.
pub trait BilevelProblem<T: Scalar>: Send + Sync {
    fn n_agents(&self) -> usize;
    fn dims(&self) -> Dims;
    /// Smoothness constant of every `f_i`.
    fn l1(&self) -> T;
    /// Smoothness constant of every `g_i`.
    fn l2(&self) -> T;
    /// A finite lower bound of `F`; it only shifts objective values.
    fn f_lower_bound(&self) -> T {
        T::zero()
    }

    fn f_value(&self, agent: usize, x: &[T], y: &[T]) -> T;
    fn g_value(&self, agent: usize, x: &[T], y: &[T]) -> T;
    fn f_gradient(&self, agent: usize, x: &[T], y: &[T]) -> Gradient<T>;
    fn g_gradient(&self, agent: usize, x: &[T], y: &[T]) -> Gradient<T>;

    fn f_gradient_sample(&self, agent: usize, x: &[T], y: &[T], noise: &NoiseModel, key: &DrawKey) -> Gradient<T> {
        let mut g = self.f_gradient(agent, x, y);
        add_gaussian_noise(&mut g, noise.delta_f, key);
        g
    }

    fn g_gradient_sample(&self, agent: usize, x: &[T], y: &[T], noise: &NoiseModel, key: &DrawKey) -> Gradient<T> {
        let mut g = self.g_gradient(agent, x, y);
        add_gaussian_noise(&mut g, noise.delta_g, key);
        g
    }

    /// Closed-form `argmin_θ G(x,θ) + ‖θ−y‖²/(2γ)` when `G(x,·)` is quadratic.
    fn prox_lower(&self, _x: &[T], _y: &[T], _gamma: T) -> Option<Vec<T>> {
        None
    }
}

pub(crate) fn check_point<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T]) -> Result<()> {
    let d = problem.dims();
    if x.len() != d.dx || y.len() != d.dy {
        return Err(DsboError::InvalidInput(format!(
            "expected (dx, dy) = ({}, {}), got ({}, {})",
            d.dx,
            d.dy,
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

fn check_agent<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, agent: usize) -> Result<()> {
    if agent >= problem.n_agents() {
        return Err(DsboError::InvalidInput(format!(
            "agent {agent} out of range (n = {})",
            problem.n_agents()
        )));
    }
    Ok(())
}

pub fn grad_f<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, agent: usize, x: &[T], y: &[T]) -> Result<Gradient<T>> {
    check_agent(problem, agent)?;
    check_point(problem, x, y)?;
    Ok(problem.f_gradient(agent, x, y))
}

pub fn grad_g<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, agent: usize, x: &[T], y: &[T]) -> Result<Gradient<T>> {
    check_agent(problem, agent)?;
    check_point(problem, x, y)?;
    Ok(problem.g_gradient(agent, x, y))
}

pub fn sample_grad_f<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    agent: usize,
    x: &[T],
    y: &[T],
    noise: &NoiseModel,
    key: &DrawKey,
) -> Result<Gradient<T>> {
    check_agent(problem, agent)?;
    check_point(problem, x, y)?;
    Ok(problem.f_gradient_sample(agent, x, y, noise, key))
}

pub fn sample_grad_g<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    agent: usize,
    x: &[T],
    y: &[T],
    noise: &NoiseModel,
    key: &DrawKey,
) -> Result<Gradient<T>> {
    check_agent(problem, agent)?;
    check_point(problem, x, y)?;
    Ok(problem.g_gradient_sample(agent, x, y, noise, key))
}

fn average<T: Scalar>(n: usize, mut term: impl FnMut(usize) -> T) -> T {
    (0..n).map(&mut term).sum::<T>() / T::of(n as f64)
}

fn average_gradient<T: Scalar>(n: usize, dims: Dims, mut term: impl FnMut(usize) -> Gradient<T>) -> Gradient<T> {
    let mut acc = Gradient::zeros(dims);
    for i in 0..n {
        acc.add_scaled(T::one(), &term(i));
    }
    let inv = T::one() / T::of(n as f64);
    acc.gx.iter_mut().chain(acc.gy.iter_mut()).for_each(|v| *v *= inv);
    acc
}

/// `F(x, y) = (1/n) Σ_i f_i(x, y)`
pub fn upper_value<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T]) -> T {
    average(problem.n_agents(), |i| problem.f_value(i, x, y))
}

/// `G(x, y) = (1/n) Σ_i g_i(x, y)`
pub fn lower_value<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T]) -> T {
    average(problem.n_agents(), |i| problem.g_value(i, x, y))
}

pub fn upper_gradient<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T]) -> Gradient<T> {
    average_gradient(problem.n_agents(), problem.dims(), |i| problem.f_gradient(i, x, y))
}

pub fn lower_gradient<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T]) -> Gradient<T> {
    average_gradient(problem.n_agents(), problem.dims(), |i| problem.g_gradient(i, x, y))
}

/// Gradient dissimilarity `((1/n)Σ‖∇f_i − ∇F‖², (1/n)Σ‖∇g_i − ∇G‖²)`.
pub fn measure_dissimilarity<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T]) -> Result<(T, T)> {
    check_point(problem, x, y)?;
    let n = problem.n_agents();
    let spread = |grads: Vec<Vec<T>>| -> T {
        let m = mean_rows(&grads);
        grads.iter().map(|g| dist_sq(g, &m)).sum::<T>() / T::of(n as f64)
    };
    let fs = (0..n).map(|i| problem.f_gradient(i, x, y).flatten()).collect();
    let gs = (0..n).map(|i| problem.g_gradient(i, x, y).flatten()).collect();
    Ok((spread(fs), spread(gs)))
}

/// Local smoothness estimate: largest Hessian eigenvalue magnitude found by
/// power iteration on finite-difference Hessian-vector products, over random
/// points within `radius` of the origin, times `margin`.
pub fn estimate_smoothness<T: Scalar>(
    dims: Dims,
    gradient: impl Fn(&[T], &[T]) -> Gradient<T>,
    radius: f64,
    points: usize,
    seed: u64,
    margin: f64,
) -> T {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = dims.dx + dims.dy;
    let split = |z: &[T]| (z[..dims.dx].to_vec(), z[dims.dx..].to_vec());
    let eps = T::of(1e-5);
    let mut best = T::zero();
    for _ in 0..points {
        let z: Vec<T> = (0..d).map(|_| T::of(rng.random_range(-radius..=radius))).collect();
        let mut v: Vec<T> = (0..d).map(|_| T::of(rng.random_range(-1.0..=1.0))).collect();
        let mut lambda = T::zero();
        for _ in 0..50 {
            let nv = norm_sq(&v).sqrt();
            if nv == T::zero() {
                break;
            }
            v.iter_mut().for_each(|c| *c /= nv);
            let plus: Vec<T> = z.iter().zip(&v).map(|(&a, &b)| a + eps * b).collect();
            let minus: Vec<T> = z.iter().zip(&v).map(|(&a, &b)| a - eps * b).collect();
            let (px, py) = split(&plus);
            let (mx, my) = split(&minus);
            let gp = gradient(&px, &py).flatten();
            let gm = gradient(&mx, &my).flatten();
            let hv: Vec<T> = gp.iter().zip(&gm).map(|(&a, &b)| (a - b) / (eps + eps)).collect();
            lambda = norm_sq(&hv).sqrt();
            v = hv;
        }
        best = best.max(lambda);
    }
    best * T::of(margin)
}
