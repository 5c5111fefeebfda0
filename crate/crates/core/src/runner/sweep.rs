//! Cartesian grids of runs and their cross-seed statistics.

use serde::{Deserialize, Serialize};

use super::stats::{streaming, two_pass, MeanStd};
use super::{run, MetricsSeries, RunConfig, RunSummary};
use crate::error::{DsboError, Result};
use crate::scalar::Scalar;
use crate::strategies::StrategyKind;
use crate::topology::TopologySpec;

/// Axes to vary. A missing axis keeps the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_agents: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Vec<TopologySpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Vec<StrategyKind>>,
    /// Explicit base seeds; takes precedence over `replicates`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Seeds `base_seed, base_seed + 1, ...`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub n_agents: usize,
    pub topology: TopologySpec,
    pub p: f64,
    pub gamma: f64,
    pub strategy: StrategyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRun {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPointResult {
    pub point: GridPoint,
    pub runs: Vec<SweepRun>,
    pub avg_grad_psi_sq: MeanStd,
    pub avg_consensus_total: MeanStd,
    pub final_grad_psi_sq: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub points: Vec<SweepPointResult>,
}

impl SweepGrid {
    pub fn seeds(&self, base_seed: u64) -> Vec<u64> {
        match (&self.seeds, self.replicates) {
            (Some(s), _) => s.clone(),
            (None, Some(r)) => (0..r as u64).map(|i| base_seed.wrapping_add(i)).collect(),
            (None, None) => vec![base_seed],
        }
    }

    /// Every grid point in row-major order over
    /// `n_agents × topology × p × gamma × strategy`.
    pub fn points(&self, base: &RunConfig) -> Vec<GridPoint> {
        let ns = self.n_agents.clone().unwrap_or_else(|| vec![base.problem.n_agents()]);
        let topos = self.topology.clone().unwrap_or_else(|| vec![base.topology.clone()]);
        let ps = self.p.clone().unwrap_or_else(|| vec![base.schedules.p]);
        let gammas = self.gamma.clone().unwrap_or_else(|| vec![base.envelope.gamma]);
        let strategies = self.strategy.clone().unwrap_or_else(|| vec![base.strategy]);
        let mut out = Vec::new();
        for &n_agents in &ns {
            for topology in &topos {
                for &p in &ps {
                    for &gamma in &gammas {
                        for &strategy in &strategies {
                            out.push(GridPoint {
                                n_agents,
                                topology: topology.clone(),
                                p,
                                gamma,
                                strategy,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

impl GridPoint {
    pub fn apply(&self, base: &RunConfig, seed: u64) -> RunConfig {
        let mut cfg = base.clone();
        cfg.problem.set_n_agents(self.n_agents);
        cfg.topology = self.topology.clone();
        if cfg.topology.n.is_some() {
            cfg.topology.n = Some(self.n_agents);
        }
        cfg.schedules.p = self.p;
        cfg.envelope.gamma = self.gamma;
        cfg.strategy = self.strategy;
        cfg.runner.base_seed = seed;
        cfg
    }
}

/// Mean and sample standard deviation, computed two ways and cross-checked.
pub fn checked_stats(values: &[f64]) -> Result<MeanStd> {
    let a = two_pass(values);
    let b = streaming(values);
    let close = |u: f64, v: f64| (u.is_nan() && v.is_nan()) || (u - v).abs() <= 1e-9 * (1.0 + u.abs().max(v.abs()));
    if !(close(a.mean, b.mean) && close(a.std, b.std)) {
        return Err(DsboError::InvalidInput(format!(
            "summary statistics disagree: two-pass ({}, {}) vs streaming ({}, {})",
            a.mean, a.std, b.mean, b.std
        )));
    }
    Ok(a)
}

/// Run every grid point for every seed. A failing run is recorded and left
/// out of the statistics; configuration errors abort the sweep.
pub fn run_sweep<T: Scalar>(base: &RunConfig, grid: &SweepGrid) -> Result<SweepResult> {
    run_sweep_with::<T>(base, grid, |_, _, _| {})
}

/// [`run_sweep`] that hands every successful series to `sink` along with its
/// grid-point index and seed.
pub fn run_sweep_with<T: Scalar>(
    base: &RunConfig,
    grid: &SweepGrid,
    mut sink: impl FnMut(usize, u64, &MetricsSeries),
) -> Result<SweepResult> {
    base.validate_static()?;
    let seeds = grid.seeds(base.runner.base_seed);
    if seeds.is_empty() {
        return Err(DsboError::Config("the sweep grid has no seeds".into()));
    }
    let mut points = Vec::new();
    for (index, point) in grid.points(base).into_iter().enumerate() {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let cfg = point.apply(base, seed);
            match run::<T>(&cfg) {
                Ok(series) => {
                    sink(index, seed, &series);
                    runs.push(SweepRun {
                        seed,
                        summary: Some(series.summary),
                        error: None,
                    });
                }
                Err(e @ (DsboError::Config(_) | DsboError::InvalidParameter(_) | DsboError::InvalidTopology(_))) => return Err(e),
                Err(e) => runs.push(SweepRun {
                    seed,
                    summary: None,
                    error: Some(e.to_string()),
                }),
            }
        }
        let collect = |f: fn(&RunSummary) -> f64| -> Vec<f64> { runs.iter().filter_map(|r| r.summary.as_ref().map(f)).collect() };
        points.push(SweepPointResult {
            avg_grad_psi_sq: checked_stats(&collect(|s| s.avg_grad_psi_sq))?,
            avg_consensus_total: checked_stats(&collect(|s| s.avg_consensus_total))?,
            final_grad_psi_sq: checked_stats(&collect(|s| s.final_grad_psi_sq))?,
            point,
            runs,
        });
    }
    Ok(SweepResult { points })
}
