//! ℓ²-regularized logistic regression with learned per-feature penalties.
//!
//! Upper variable `x = π ∈ R^s` (log regularization weights), lower variable
//! `y = τ ∈ R^s` (model). Agent `i`:
//!
//! ```text
//! f_i(π, τ) = mean_{val}   𝓛(y_e x_eᵀτ)
//! g_i(π, τ) = mean_{train} 𝓛(y_e x_eᵀτ) + ½ τᵀ diag(e^π) τ,   𝓛(z) = log(1 + e^{−z})
//! ```
//!
//! Losses are averaged (not summed) over samples. Agent `i` draws features
//! from `N(0, (i+1)²)`, i.e. the 1-based agent number is the scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{add_gaussian_noise, estimate_smoothness, BilevelProblem, Dims, Gradient, NoiseKind, NoiseModel};
use crate::error::{DsboError, Result};
use crate::linalg::dot;
use crate::rng::DrawKey;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub features: Vec<Vec<T>>,
    /// ±1 labels.
    pub labels: Vec<T>,
}

impl<T> Dataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentData<T> {
    pub train: Dataset<T>,
    pub val: Dataset<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticData<T> {
    pub tau_star: Vec<T>,
    pub agents: Vec<AgentData<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticParams {
    pub n_agents: usize,
    pub features: usize,
    pub train_per_agent: usize,
    pub val_per_agent: usize,
    /// Scale of the Gaussian label noise inside the sign.
    pub noise_rate: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            n_agents: 8,
            features: 10,
            train_per_agent: 200,
            val_per_agent: 100,
            noise_rate: 0.1,
        }
    }
}

/// Plant `τ*`, then per agent draw features and labels
/// `sign(x_eᵀτ* + noise_rate·β_e)`, shuffle, and split train/validation.
pub fn generate_logistic_data<T: Scalar>(params: &LogisticParams, seed: u64) -> Result<LogisticData<T>> {
    if params.features < 1 || params.train_per_agent < 2 || params.val_per_agent < 2 || params.n_agents < 1 {
        return Err(DsboError::InvalidParameter(
            "logistic data needs s >= 1, n >= 1 and at least 2 samples per split".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = params.features;
    let tau_star: Vec<f64> = (0..s).map(|_| StandardNormal.sample(&mut rng)).collect();
    let total = params.train_per_agent + params.val_per_agent;
    let agents = (0..params.n_agents)
        .map(|i| {
            let scale = (i + 1) as f64;
            let mut rows: Vec<(Vec<T>, T)> = (0..total)
                .map(|_| {
                    let xe: Vec<f64> = (0..s)
                        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                        .collect();
                    let beta: f64 = StandardNormal.sample(&mut rng);
                    let margin = xe.iter().zip(&tau_star).map(|(a, b)| a * b).sum::<f64>() + params.noise_rate * beta;
                    let label = if margin >= 0.0 { T::one() } else { -T::one() };
                    (xe.into_iter().map(T::of).collect(), label)
                })
                .collect();
            // Fisher–Yates with the same generator
            for j in (1..rows.len()).rev() {
                let k = rng.random_range(0..=j);
                rows.swap(j, k);
            }
            let val_rows = rows.split_off(params.train_per_agent);
            let unzip = |rows: Vec<(Vec<T>, T)>| {
                let (features, labels) = rows.into_iter().unzip();
                Dataset { features, labels }
            };
            AgentData {
                train: unzip(rows),
                val: unzip(val_rows),
            }
        })
        .collect();
    Ok(LogisticData {
        tau_star: tau_star.into_iter().map(T::of).collect(),
        agents,
    })
}

/// `log(1 + e^{−z})`, evaluated without overflow.
fn logistic_loss<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `d/dz log(1 + e^{−z}) = −1 / (1 + e^{z})`
fn logistic_slope<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        let e = (-z).exp();
        -e / (T::one() + e)
    } else {
        -T::one() / (T::one() + z.exp())
    }
}

#[derive(Debug, Clone)]
pub struct LogisticHyperopt<T> {
    features: usize,
    data: LogisticData<T>,
    l1: T,
    l2: T,
}

impl<T: Scalar> LogisticHyperopt<T> {
    /// Wrap generated data and estimate smoothness constants around the
    /// origin (radius 1, margin 1.1).
    pub fn new(data: LogisticData<T>) -> Result<Self> {
        let features = data.tau_star.len();
        if data.agents.is_empty() || features == 0 {
            return Err(DsboError::InvalidParameter("logistic instance needs agents and features".into()));
        }
        let mut problem = Self {
            features,
            data,
            l1: T::one(),
            l2: T::one(),
        };
        let dims = problem.dims();
        let n = problem.n_agents();
        let mut l1 = T::zero();
        let mut l2 = T::zero();
        for i in 0..n {
            l1 = l1.max(estimate_smoothness(
                dims,
                |x, y| problem.f_gradient(i, x, y),
                1.0,
                4,
                11 + i as u64,
                1.1,
            ));
            l2 = l2.max(estimate_smoothness(
                dims,
                |x, y| problem.g_gradient(i, x, y),
                1.0,
                4,
                97 + i as u64,
                1.1,
            ));
        }
        problem.l1 = l1.max(T::epsilon());
        problem.l2 = l2.max(T::epsilon());
        Ok(problem)
    }

    pub fn generate(params: &LogisticParams, seed: u64) -> Result<Self> {
        Self::new(generate_logistic_data(params, seed)?)
    }

    pub fn data(&self) -> &LogisticData<T> {
        &self.data
    }

    /// Accumulate `Σ_e w_e 𝓛'(y_e x_eᵀτ) y_e x_e` over the given sample indices,
    /// scaled by `1/count`.
    fn loss_gradient(&self, set: &Dataset<T>, tau: &[T], idx: impl Iterator<Item = usize>, count: usize) -> Vec<T> {
        let mut g = vec![T::zero(); self.features];
        for e in idx {
            let (xe, ye) = (&set.features[e], set.labels[e]);
            let coef = logistic_slope(ye * dot(xe, tau)) * ye;
            for (gj, &xj) in g.iter_mut().zip(xe) {
                *gj += coef * xj;
            }
        }
        let inv = T::one() / T::of(count as f64);
        g.iter_mut().for_each(|v| *v *= inv);
        g
    }

    fn mean_loss(&self, set: &Dataset<T>, tau: &[T]) -> T {
        let total: T = set
            .features
            .iter()
            .zip(&set.labels)
            .map(|(xe, &ye)| logistic_loss(ye * dot(xe, tau)))
            .sum();
        total / T::of(set.len() as f64)
    }

    fn regularizer_gradient(pi: &[T], tau: &[T], gy: &mut [T]) -> Vec<T> {
        let half = T::of(0.5);
        pi.iter()
            .zip(tau)
            .zip(gy.iter_mut())
            .map(|((&p, &t), g)| {
                let w = p.exp();
                *g += w * t;
                half * w * t * t
            })
            .collect()
    }

    fn batch(&self, len: usize, size: usize, key: &DrawKey) -> Vec<usize> {
        let mut rng = key.rng();
        (0..size).map(|_| rng.random_range(0..len)).collect()
    }
}

impl<T: Scalar> BilevelProblem<T> for LogisticHyperopt<T> {
    fn n_agents(&self) -> usize {
        self.data.agents.len()
    }

    fn dims(&self) -> Dims {
        Dims {
            dx: self.features,
            dy: self.features,
        }
    }

    fn l1(&self) -> T {
        self.l1
    }

    fn l2(&self) -> T {
        self.l2
    }

    fn f_value(&self, agent: usize, _x: &[T], y: &[T]) -> T {
        self.mean_loss(&self.data.agents[agent].val, y)
    }

    fn g_value(&self, agent: usize, x: &[T], y: &[T]) -> T {
        let reg: T = x.iter().zip(y).map(|(&p, &t)| p.exp() * t * t).sum::<T>() * T::of(0.5);
        self.mean_loss(&self.data.agents[agent].train, y) + reg
    }

    fn f_gradient(&self, agent: usize, _x: &[T], y: &[T]) -> Gradient<T> {
        let set = &self.data.agents[agent].val;
        Gradient {
            gx: vec![T::zero(); self.features],
            gy: self.loss_gradient(set, y, 0..set.len(), set.len()),
        }
    }

    fn g_gradient(&self, agent: usize, x: &[T], y: &[T]) -> Gradient<T> {
        let set = &self.data.agents[agent].train;
        let mut gy = self.loss_gradient(set, y, 0..set.len(), set.len());
        let gx = Self::regularizer_gradient(x, y, &mut gy);
        Gradient { gx, gy }
    }

    fn f_gradient_sample(&self, agent: usize, x: &[T], y: &[T], noise: &NoiseModel, key: &DrawKey) -> Gradient<T> {
        match noise.kind {
            NoiseKind::Minibatch => {
                let set = &self.data.agents[agent].val;
                let idx = self.batch(set.len(), noise.batch_size, key);
                Gradient {
                    gx: vec![T::zero(); self.features],
                    gy: self.loss_gradient(set, y, idx.into_iter(), noise.batch_size),
                }
            }
            NoiseKind::AdditiveGaussian => {
                let mut g = self.f_gradient(agent, x, y);
                add_gaussian_noise(&mut g, noise.delta_f, key);
                g
            }
        }
    }

    fn g_gradient_sample(&self, agent: usize, x: &[T], y: &[T], noise: &NoiseModel, key: &DrawKey) -> Gradient<T> {
        match noise.kind {
            NoiseKind::Minibatch => {
                let set = &self.data.agents[agent].train;
                let idx = self.batch(set.len(), noise.batch_size, key);
                let mut gy = self.loss_gradient(set, y, idx.into_iter(), noise.batch_size);
                let gx = Self::regularizer_gradient(x, y, &mut gy);
                Gradient { gx, gy }
            }
            NoiseKind::AdditiveGaussian => {
                let mut g = self.g_gradient(agent, x, y);
                add_gaussian_noise(&mut g, noise.delta_g, key);
                g
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::grad_g;
    use crate::rng::{derive_draw_key, Stream};

    fn small() -> LogisticParams {
        LogisticParams {
            n_agents: 3,
            features: 4,
            train_per_agent: 40,
            val_per_agent: 20,
            noise_rate: 0.1,
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_logistic_data::<f64>(&small(), 5).unwrap();
        let b = generate_logistic_data::<f64>(&small(), 5).unwrap();
        assert_eq!(a, b);
        let c = generate_logistic_data::<f64>(&small(), 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_labels_are_separable() {
        let params = LogisticParams {
            noise_rate: 0.0,
            ..small()
        };
        let d = generate_logistic_data::<f64>(&params, 1).unwrap();
        for agent in &d.agents {
            for set in [&agent.train, &agent.val] {
                for (xe, &ye) in set.features.iter().zip(&set.labels) {
                    assert!(ye * dot(xe, &d.tau_star) >= 0.0);
                }
            }
        }
    }

    #[test]
    fn agent_feature_scale() {
        let params = LogisticParams {
            n_agents: 3,
            features: 1,
            train_per_agent: 9_000,
            val_per_agent: 1_000,
            noise_rate: 0.1,
        };
        let d = generate_logistic_data::<f64>(&params, 3).unwrap();
        let a = &d.agents[2];
        let xs: Vec<f64> = a.train.features.iter().chain(&a.val.features).map(|r| r[0]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        assert!((sd - 3.0).abs() < 0.15, "sd = {sd}");
    }

    #[test]
    fn regularizer_gradient_vanishes_at_zero_tau() {
        let p = LogisticHyperopt::<f64>::generate(&small(), 2).unwrap();
        let g = grad_g(&p, 0, &[0.3, -1.0, 0.0, 2.0], &[0.0; 4]).unwrap();
        assert!(g.gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn minibatch_is_deterministic_per_key() {
        let p = LogisticHyperopt::<f64>::generate(&small(), 2).unwrap();
        let noise = NoiseModel::minibatch(8);
        let key = derive_draw_key(1, 2, 0, Stream::GradG);
        let a = p.g_gradient_sample(0, &[0.0; 4], &[0.1; 4], &noise, &key);
        let b = p.g_gradient_sample(0, &[0.0; 4], &[0.1; 4], &noise, &key);
        assert_eq!(a, b);
    }

    #[test]
    fn smoothness_estimates_positive() {
        let p = LogisticHyperopt::<f64>::generate(&small(), 2).unwrap();
        assert!(p.l1() > 0.0 && p.l2() > 0.0);
    }

    #[test]
    fn rejects_tiny_splits() {
        let params = LogisticParams {
            train_per_agent: 1,
            ..small()
        };
        assert!(generate_logistic_data::<f64>(&params, 0).is_err());
    }
}
