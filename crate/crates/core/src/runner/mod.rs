//! Iteration driver, metrics series and parameter sweeps.

mod config;
pub mod stats;
mod sweep;

pub use config::{InitSpec, Instance, ProblemSpec, RunConfig, RunnerSection, VarInit};
pub use sweep::{checked_stats, run_sweep, run_sweep_with, GridPoint, SweepGrid, SweepPointResult, SweepResult, SweepRun};

use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::block::Triple;
use crate::directions::{stochastic_directions, DirectionTriple, EstimatorState};
use crate::envelope::{metrics_with_warm_start, StationarityRecord};
use crate::error::{DsboError, Result};
use crate::linalg::{dist_sq, mean_rows, norm_sq};
use crate::problems::{BilevelProblem, Dims, ToyReference};
use crate::rng::{derive_draw_key, SampleKeys, Stream};
use crate::scalar::Scalar;
use crate::strategies::{AgentRows, StepContext, SwarmState};
use crate::topology::WeightMatrix;

/// Environment variable consulted when `runner.workers` is unset.
pub const THREADS_ENV: &str = "DSBO_THREADS";

/// One recorded iteration. `record` is `None` when the metric oracle failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub k: usize,
    pub mu: f64,
    pub record: Option<StationarityRecord>,
    pub rel_err_x: Option<f64>,
    pub rel_err_y: Option<f64>,
    pub mix_ops_cumulative: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    /// Mean of `‖∇Ψ‖²` over recorded rows.
    pub avg_grad_psi_sq: f64,
    /// Mean total consensus error over recorded rows.
    pub avg_consensus_total: f64,
    pub final_grad_psi_sq: f64,
    pub final_consensus_total: f64,
    pub final_rel_err_x: Option<f64>,
    pub final_rel_err_y: Option<f64>,
    pub recorded: usize,
    pub gaps: usize,
    pub total_mix_ops: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSeries {
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
    pub gamma_range_warning: Option<String>,
    pub topology_warnings: Vec<String>,
    /// Swarm averages after the last step.
    pub final_xbar: Vec<f64>,
    pub final_ybar: Vec<f64>,
}

/// Build the problem named in `config` and run it.
pub fn run<T: Scalar>(config: &RunConfig) -> Result<MetricsSeries> {
    config.validate_static()?;
    let instance = config.problem.build::<T>()?;
    run_with_problem(instance.problem.as_ref(), instance.reference.as_ref(), config)
}

/// Run `config` against an arbitrary problem. The `problem` section of the
/// config is ignored except for its noise model.
pub fn run_with_problem<T: Scalar>(
    problem: &dyn BilevelProblem<T>,
    reference: Option<&ToyReference<T>>,
    config: &RunConfig,
) -> Result<MetricsSeries> {
    config.validate_static()?;
    let n = problem.n_agents();
    let dims = problem.dims();
    let swarm = initial_swarm(config, n, dims)?;
    let topo_seed = config.topology.seed.unwrap_or(config.runner.base_seed);
    let static_w = if config.topology.is_dynamic() {
        None
    } else {
        Some(config.topology.build::<T>(n, 0)?)
    };
    let warnings = static_w.as_ref().map(|w| w.warnings().to_vec()).unwrap_or_default();
    let driver = Driver {
        problem,
        reference,
        config,
        n,
        topo_seed,
        static_w,
    };
    let workers = resolve_workers(config.runner.workers)?;
    let mut series = match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| DsboError::Config(format!("cannot start worker pool: {e}")))?;
            pool.install(|| driver.iterate(swarm))?
        }
        None => driver.iterate(swarm)?,
    };
    series.gamma_range_warning = config.envelope.gamma_range_warning(problem);
    series.topology_warnings = warnings;
    Ok(series)
}

fn resolve_workers(explicit: Option<usize>) -> Result<Option<usize>> {
    if explicit.is_some() {
        return Ok(explicit);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(Some(w)),
            _ => Err(DsboError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

fn init_rows<T: Scalar>(spec: &config::VarInit, n: usize, dim: usize, base_seed: u64, salt: usize) -> Result<AgentRows<T>> {
    use config::VarInit;
    match spec {
        VarInit::Zeros => Ok(vec![vec![T::zero(); dim]; n]),
        VarInit::Explicit { values } => {
            if values.len() != dim {
                return Err(DsboError::Config(format!(
                    "explicit init has length {} but the block has dimension {dim}",
                    values.len()
                )));
            }
            Ok(vec![values.iter().map(|&v| T::of(v)).collect(); n])
        }
        VarInit::Gaussian { scale } => {
            if !(scale.is_finite() && *scale >= 0.0) {
                return Err(DsboError::Config("init scale must be finite and nonnegative".into()));
            }
            Ok((0..n)
                .map(|i| {
                    let mut rng = derive_draw_key(base_seed, salt as u64, i, Stream::Init).rng();
                    (0..dim)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            T::of(scale * z)
                        })
                        .collect()
                })
                .collect())
        }
    }
}

fn initial_swarm<T: Scalar>(config: &RunConfig, n: usize, dims: Dims) -> Result<SwarmState<T>> {
    let init = config.init();
    let seed = config.runner.base_seed;
    SwarmState::from_rows(
        init_rows(&init.theta, n, dims.dy, seed, 0)?,
        init_rows(&init.x, n, dims.dx, seed, 1)?,
        init_rows(&init.y, n, dims.dy, seed, 2)?,
    )
}

struct Driver<'a, T: Scalar> {
    problem: &'a dyn BilevelProblem<T>,
    reference: Option<&'a ToyReference<T>>,
    config: &'a RunConfig,
    n: usize,
    topo_seed: u64,
    static_w: Option<WeightMatrix<T>>,
}

impl<T: Scalar> Driver<'_, T> {
    fn weights(&self, k: usize) -> Result<std::borrow::Cow<'_, WeightMatrix<T>>> {
        match &self.static_w {
            Some(w) => Ok(std::borrow::Cow::Borrowed(w)),
            None => {
                let seed = derive_draw_key(self.topo_seed, k as u64, 0, Stream::Topology).to_seed();
                Ok(std::borrow::Cow::Owned(self.config.topology.build::<T>(self.n, seed)?))
            }
        }
    }

    fn relative_errors(&self, swarm: &SwarmState<T>) -> (Option<f64>, Option<f64>) {
        let Some(r) = self.reference else { return (None, None) };
        let rel = |v: &[T], star: &[T]| {
            let denom = norm_sq(star).as_f64().sqrt().max(f64::MIN_POSITIVE);
            dist_sq(v, star).as_f64().sqrt() / denom
        };
        let xbar = mean_rows(&swarm.vars.x);
        let ybar = mean_rows(&swarm.vars.y);
        (Some(rel(&xbar, &r.x)), Some(rel(&ybar, &r.y())))
    }

    fn iterate(&self, mut swarm: SwarmState<T>) -> Result<MetricsSeries> {
        let cfg = self.config;
        let horizon = cfg.iterations();
        let record_every = cfg.envelope.record_every.max(1);
        let rho = cfg.estimator.rho_schedule();
        let noise = cfg.problem.noise();
        let gamma = cfg.envelope.gamma;
        let base = cfg.runner.base_seed;
        let mixes = cfg.strategy.mixes_per_round() as u64;
        let mut estimators: Vec<EstimatorState<T>> = (0..self.n).map(|_| EstimatorState::new(cfg.estimator.kind, T::one())).collect();
        let mut rows = Vec::new();
        let mut warm: Option<Vec<T>> = None;
        let start = Instant::now();

        for k in 0..horizon {
            let mu = cfg.schedules.mu_at(k);
            let mu_prev = if k == 0 { mu } else { cfg.schedules.mu_at(k - 1) };
            let steps = cfg.schedules.steps_at(k, self.n);
            let w = self.weights(k)?;

            if k % record_every == 0 || k + 1 == horizon {
                let record = match metrics_with_warm_start(self.problem, &swarm, mu, &cfg.envelope, warm.as_deref()) {
                    Ok((rec, theta)) => {
                        warm = Some(theta);
                        Some(rec)
                    }
                    Err(DsboError::InnerSolveFailed { .. }) => None,
                    Err(e) => return Err(e),
                };
                let (rel_err_x, rel_err_y) = self.relative_errors(&swarm);
                rows.push(MetricsRow {
                    k,
                    mu,
                    record,
                    rel_err_x,
                    rel_err_y,
                    mix_ops_cumulative: k as u64 * mixes,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                });
            }

            let rho_k = T::of(rho.at(k));
            let estimates: Vec<DirectionTriple<T>> = {
                let swarm_ref = &swarm;
                estimators
                    .par_iter_mut()
                    .enumerate()
                    .map(|(i, est)| {
                        est.rho = Triple::splat(rho_k);
                        let keys = SampleKeys::derive(base, k as u64, i);
                        let (x, y, theta) = swarm_ref.agent(i);
                        let raw = stochastic_directions(self.problem, i, x, y, theta, mu, gamma, noise, &keys)?;
                        let reeval = match (&swarm_ref.prev_vars, est.needs_reeval()) {
                            (Some(prev), true) => Some(stochastic_directions(
                                self.problem,
                                i,
                                &prev.x[i],
                                &prev.y[i],
                                &prev.theta[i],
                                mu_prev,
                                gamma,
                                noise,
                                &keys,
                            )?),
                            _ => None,
                        };
                        est.apply(raw, reeval.as_ref())
                    })
                    .collect::<Result<_>>()?
            };

            let ctx = StepContext { w: &w, steps, mu, gamma };
            cfg.strategy.step(&mut swarm, &ctx, &estimates)?;
        }

        let summary = summarize(&rows, horizon as u64 * mixes, start.elapsed().as_secs_f64() * 1e3);
        Ok(MetricsSeries {
            rows,
            summary,
            gamma_range_warning: None,
            topology_warnings: Vec::new(),
            final_xbar: mean_rows(&swarm.vars.x).iter().map(|v| v.as_f64()).collect(),
            final_ybar: mean_rows(&swarm.vars.y).iter().map(|v| v.as_f64()).collect(),
        })
    }
}

fn summarize(rows: &[MetricsRow], total_mix_ops: u64, wall_ms: f64) -> RunSummary {
    let recs: Vec<&StationarityRecord> = rows.iter().filter_map(|r| r.record.as_ref()).collect();
    let mean = |f: fn(&StationarityRecord) -> f64| {
        if recs.is_empty() {
            f64::NAN
        } else {
            recs.iter().map(|r| f(r)).sum::<f64>() / recs.len() as f64
        }
    };
    let last = recs.last();
    RunSummary {
        avg_grad_psi_sq: mean(|r| r.grad_psi_sq),
        avg_consensus_total: mean(|r| r.consensus_total),
        final_grad_psi_sq: last.map_or(f64::NAN, |r| r.grad_psi_sq),
        final_consensus_total: last.map_or(f64::NAN, |r| r.consensus_total),
        final_rel_err_x: rows.last().and_then(|r| r.rel_err_x),
        final_rel_err_y: rows.last().and_then(|r| r.rel_err_y),
        recorded: recs.len(),
        gaps: rows.len() - recs.len(),
        total_mix_ops,
        wall_ms,
    }
}
