//! Decentralized stochastic bilevel optimization through a Moreau-envelope
//! penalty: topologies, problem instances, update strategies, variance-reduced
//! estimators and an instrumented runner.
//!
//! The library is generic over the scalar type ([`Scalar`] is implemented for
//! `f32` and `f64`); the aliases at the crate root fix it to one of them.

pub mod block;
pub mod directions;
pub mod envelope;
pub mod error;
pub mod linalg;
pub mod problems;
pub mod rng;
pub mod runner;
pub mod scalar;
pub mod selftest;
pub mod strategies;
pub mod topology;

pub use block::{Block, Triple};
pub use directions::{
    deterministic_directions, stochastic_directions, DirectionTriple, EstimatorKind, EstimatorSpec, EstimatorState, RhoSchedule, Schedules,
    StepSizes,
};
pub use envelope::{grad_moreau, grad_psi, metrics, moreau_value, psi_value, solve_theta_star, EnvelopeConfig, StationarityRecord};
pub use error::{DsboError, Result};
pub use problems::{BilevelProblem, Dims, Gradient, LogisticHyperopt, LogisticParams, NoiseKind, NoiseModel, QuadraticToy, ToyReference};
pub use rng::{derive_draw_key, DrawKey, SampleKeys, Stream};
pub use runner::{run, run_sweep, run_with_problem, MetricsRow, MetricsSeries, ProblemSpec, RunConfig, RunSummary, SweepGrid};
pub use scalar::Scalar;
pub use strategies::{StepContext, StrategyKind, SwarmState};
pub use topology::{BuildMode, ConnectivityReport, TopologyKind, TopologySpec, ValidationReport, WeightMatrix};

pub type WeightMatrix64 = WeightMatrix<f64>;
pub type WeightMatrix32 = WeightMatrix<f32>;
pub type SwarmState64 = SwarmState<f64>;
pub type SwarmState32 = SwarmState<f32>;
pub type QuadraticToy64 = QuadraticToy<f64>;
pub type QuadraticToy32 = QuadraticToy<f32>;
pub type LogisticHyperopt64 = LogisticHyperopt<f64>;
pub type LogisticHyperopt32 = LogisticHyperopt<f32>;
