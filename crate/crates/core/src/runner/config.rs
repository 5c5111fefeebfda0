//! Run configuration: one JSON document with sections `problem`, `topology`,
//! `strategy`, `estimator`, `schedules`, `envelope` and `runner`.

use serde::{Deserialize, Serialize};

use crate::directions::{EstimatorSpec, Schedules};
use crate::envelope::EnvelopeConfig;
use crate::error::{DsboError, Result};
use crate::problems::{BilevelProblem, LogisticHyperopt, LogisticParams, NoiseKind, NoiseModel, QuadraticToy, ToyReference};
use crate::scalar::Scalar;
use crate::strategies::StrategyKind;
use crate::topology::TopologySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "instance", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Quadratic instance with `a_i = 1 + a_step·i`, `b_i = 1 + b_step·i`.
    Toy {
        n_agents: usize,
        #[serde(default = "default_toy_dim")]
        dim: usize,
        #[serde(default = "default_a_step")]
        a_step: f64,
        #[serde(default = "default_b_step")]
        b_step: f64,
        #[serde(default)]
        noise: NoiseModel,
    },
    Logistic {
        n_agents: usize,
        #[serde(default = "default_features")]
        features: usize,
        #[serde(default = "default_train")]
        train_per_agent: usize,
        #[serde(default = "default_val")]
        val_per_agent: usize,
        #[serde(default = "default_noise_rate")]
        noise_rate: f64,
        #[serde(default)]
        data_seed: u64,
        #[serde(default = "default_minibatch")]
        noise: NoiseModel,
    },
}

fn default_toy_dim() -> usize {
    10
}
fn default_a_step() -> f64 {
    0.1
}
fn default_b_step() -> f64 {
    0.05
}
fn default_features() -> usize {
    10
}
fn default_train() -> usize {
    200
}
fn default_val() -> usize {
    100
}
fn default_noise_rate() -> f64 {
    0.1
}
fn default_minibatch() -> NoiseModel {
    NoiseModel::minibatch(32)
}

/// A built problem plus its closed-form reference solution, if any.
pub struct Instance<T> {
    pub problem: Box<dyn BilevelProblem<T>>,
    pub reference: Option<ToyReference<T>>,
}

impl ProblemSpec {
    pub fn n_agents(&self) -> usize {
        match self {
            ProblemSpec::Toy { n_agents, .. } | ProblemSpec::Logistic { n_agents, .. } => *n_agents,
        }
    }

    pub fn set_n_agents(&mut self, n: usize) {
        match self {
            ProblemSpec::Toy { n_agents, .. } | ProblemSpec::Logistic { n_agents, .. } => *n_agents = n,
        }
    }

    pub fn noise(&self) -> &NoiseModel {
        match self {
            ProblemSpec::Toy { noise, .. } | ProblemSpec::Logistic { noise, .. } => noise,
        }
    }

    pub fn noise_mut(&mut self) -> &mut NoiseModel {
        match self {
            ProblemSpec::Toy { noise, .. } | ProblemSpec::Logistic { noise, .. } => noise,
        }
    }

    pub fn toy(n_agents: usize, dim: usize) -> Self {
        ProblemSpec::Toy {
            n_agents,
            dim,
            a_step: default_a_step(),
            b_step: default_b_step(),
            noise: NoiseModel::noiseless(),
        }
    }

    pub fn build<T: Scalar>(&self) -> Result<Instance<T>> {
        if self.n_agents() == 0 {
            return Err(DsboError::Config("problem.n_agents must be at least 1".into()));
        }
        let noise = self.noise();
        if noise.delta_f < 0.0 || noise.delta_g < 0.0 || noise.batch_size == 0 {
            return Err(DsboError::Config("noise levels must be nonnegative and batch_size positive".into()));
        }
        match self {
            ProblemSpec::Toy {
                n_agents,
                dim,
                a_step,
                b_step,
                noise,
            } => {
                if noise.kind == NoiseKind::Minibatch {
                    return Err(DsboError::Config(
                        "the toy instance has no data; use additive_gaussian noise".into(),
                    ));
                }
                if *dim == 0 {
                    return Err(DsboError::Config("problem.dim must be at least 1".into()));
                }
                let toy = QuadraticToy::with_spread(*n_agents, *dim, *a_step, *b_step);
                let reference = toy.reference_solution().ok();
                Ok(Instance {
                    problem: Box::new(toy),
                    reference,
                })
            }
            ProblemSpec::Logistic {
                n_agents,
                features,
                train_per_agent,
                val_per_agent,
                noise_rate,
                data_seed,
                ..
            } => {
                let params = LogisticParams {
                    n_agents: *n_agents,
                    features: *features,
                    train_per_agent: *train_per_agent,
                    val_per_agent: *val_per_agent,
                    noise_rate: *noise_rate,
                };
                let p = LogisticHyperopt::generate(&params, *data_seed)?;
                Ok(Instance {
                    problem: Box::new(p),
                    reference: None,
                })
            }
        }
    }

    /// Initialization used when the config does not specify one.
    pub fn default_init(&self) -> InitSpec {
        match self {
            ProblemSpec::Toy { .. } => InitSpec::splat(VarInit::Zeros),
            ProblemSpec::Logistic { .. } => InitSpec::splat(VarInit::Gaussian { scale: 0.01 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VarInit {
    Zeros,
    /// Independent `N(0, scale²)` entries per agent.
    Gaussian {
        scale: f64,
    },
    /// The same vector for every agent.
    Explicit {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub theta: VarInit,
    pub x: VarInit,
    pub y: VarInit,
}

impl InitSpec {
    pub fn splat(v: VarInit) -> Self {
        Self {
            theta: v.clone(),
            x: v.clone(),
            y: v,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerSection {
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSpec>,
    /// Worker threads for per-agent work; `None` falls back to the
    /// `DSBO_THREADS` environment variable, then to the global pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub topology: TopologySpec,
    pub strategy: StrategyKind,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    pub schedules: Schedules,
    pub envelope: EnvelopeConfig,
    #[serde(default)]
    pub runner: RunnerSection,
}

impl RunConfig {
    pub fn iterations(&self) -> usize {
        self.schedules.horizon
    }

    pub fn init(&self) -> InitSpec {
        self.runner.init.clone().unwrap_or_else(|| self.problem.default_init())
    }

    /// Checks that do not need the built problem.
    pub fn validate_static(&self) -> Result<()> {
        self.schedules.validate()?;
        self.envelope.validate()?;
        self.estimator.validate()?;
        if self.runner.workers == Some(0) {
            return Err(DsboError::Config("runner.workers must be at least 1".into()));
        }
        Ok(())
    }
}
