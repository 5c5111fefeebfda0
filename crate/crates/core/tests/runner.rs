use dsbo_core::linalg::deviation_energy;
use dsbo_core::runner::{checked_stats, run_sweep, InitSpec, RunnerSection, SweepGrid, VarInit};
use dsbo_core::{
    run, run_with_problem, BilevelProblem, Dims, DsboError, EnvelopeConfig, EstimatorKind, EstimatorSpec, Gradient, NoiseModel,
    ProblemSpec, RunConfig, Schedules, StepSizes, StrategyKind, TopologyKind, TopologySpec, WeightMatrix,
};

fn toy_config(strategy: StrategyKind, k: usize) -> RunConfig {
    RunConfig {
        problem: ProblemSpec::Toy {
            n_agents: 5,
            dim: 3,
            a_step: 0.1,
            b_step: 0.05,
            noise: NoiseModel::gaussian(0.2, 0.2),
        },
        topology: TopologySpec::ring(5, 0.5),
        strategy,
        estimator: EstimatorSpec::default(),
        schedules: Schedules::fixed_steps(
            0.5,
            0.1,
            StepSizes {
                theta: 0.1,
                x: 0.02,
                y: 0.02,
            },
            k,
        ),
        envelope: EnvelopeConfig {
            record_every: 7,
            ..EnvelopeConfig::new(0.2)
        },
        runner: RunnerSection {
            base_seed: 42,
            ..Default::default()
        },
    }
}

type NumericRow = (usize, f64, Option<dsbo_core::StationarityRecord>, Option<f64>, Option<f64>, u64);

fn numeric_rows(s: &dsbo_core::MetricsSeries) -> Vec<NumericRow> {
    s.rows
        .iter()
        .map(|r| (r.k, r.mu, r.record, r.rel_err_x, r.rel_err_y, r.mix_ops_cumulative))
        .collect()
}

#[test]
fn rows_follow_the_recording_grid_and_schedule() {
    let cfg = toy_config(StrategyKind::GtAtc, 50);
    let s = run::<f64>(&cfg).unwrap();
    let ks: Vec<usize> = s.rows.iter().map(|r| r.k).collect();
    assert_eq!(ks, vec![0, 7, 14, 21, 28, 35, 42, 49]);
    for r in &s.rows {
        assert_eq!(r.mu, 0.5 * ((r.k + 1) as f64).powf(-0.1));
        assert_eq!(r.record.unwrap().mu, r.mu);
        assert_eq!(r.mix_ops_cumulative, 2 * r.k as u64);
    }
    assert_eq!(s.summary.total_mix_ops, 100);
}

#[test]
fn every_strategy_and_estimator_is_deterministic() {
    for strategy in StrategyKind::ALL {
        for kind in [EstimatorKind::Minibatch, EstimatorKind::Momentum, EstimatorKind::Storm] {
            let mut cfg = toy_config(strategy, 40);
            cfg.estimator.kind = kind;
            let a = run::<f64>(&cfg).unwrap();
            cfg.runner.workers = Some(3);
            let b = run::<f64>(&cfg).unwrap();
            cfg.runner.workers = Some(1);
            let c = run::<f64>(&cfg).unwrap();
            assert_eq!(numeric_rows(&a), numeric_rows(&b), "{strategy} {kind:?}");
            assert_eq!(numeric_rows(&a), numeric_rows(&c), "{strategy} {kind:?}");
            assert_eq!(a.final_xbar, b.final_xbar);
        }
    }
}

#[test]
fn seeds_change_stochastic_runs() {
    let cfg = toy_config(StrategyKind::Se, 20);
    let mut other = cfg.clone();
    other.runner.base_seed += 1;
    assert_ne!(run::<f64>(&cfg).unwrap().final_xbar, run::<f64>(&other).unwrap().final_xbar);
}

#[test]
fn dynamic_topology_runs_are_deterministic() {
    let mut cfg = toy_config(StrategyKind::GtSemiAtc, 30);
    cfg.topology = TopologySpec {
        m_min: Some(2),
        m_max: Some(3),
        ..TopologySpec::of_kind(TopologyKind::DynamicMh, 5)
    };
    let a = run::<f64>(&cfg).unwrap();
    cfg.runner.workers = Some(2);
    assert_eq!(numeric_rows(&a), numeric_rows(&run::<f64>(&cfg).unwrap()));
}

/// Homogeneous problem whose every gradient vanishes at the origin.
struct Flat;

impl BilevelProblem<f64> for Flat {
    fn n_agents(&self) -> usize {
        3
    }
    fn dims(&self) -> Dims {
        Dims { dx: 2, dy: 2 }
    }
    fn l1(&self) -> f64 {
        1.0
    }
    fn l2(&self) -> f64 {
        1.0
    }
    fn f_value(&self, _: usize, x: &[f64], y: &[f64]) -> f64 {
        0.5 * (x.iter().chain(y).map(|v| v * v).sum::<f64>())
    }
    fn g_value(&self, _: usize, _: &[f64], y: &[f64]) -> f64 {
        0.5 * y.iter().map(|v| v * v).sum::<f64>()
    }
    fn f_gradient(&self, _: usize, x: &[f64], y: &[f64]) -> Gradient<f64> {
        Gradient {
            gx: x.to_vec(),
            gy: y.to_vec(),
        }
    }
    fn g_gradient(&self, _: usize, x: &[f64], y: &[f64]) -> Gradient<f64> {
        Gradient {
            gx: vec![0.0; x.len()],
            gy: y.to_vec(),
        }
    }
}

#[test]
fn stationary_consensus_start_gives_zero_metrics() {
    let mut cfg = toy_config(StrategyKind::Se, 1);
    cfg.problem = ProblemSpec::Toy {
        n_agents: 3,
        dim: 2,
        a_step: 0.0,
        b_step: 0.0,
        noise: NoiseModel::noiseless(),
    };
    cfg.topology = TopologySpec::ring(3, 0.5);
    let s = run_with_problem(&Flat, None, &cfg).unwrap();
    assert_eq!(s.rows.len(), 1);
    let r = s.rows[0].record.unwrap();
    assert_eq!((r.grad_psi_sq, r.consensus_total), (0.0, 0.0));
}

#[test]
fn zero_steps_reproduce_pure_mixing() {
    let mut cfg = toy_config(StrategyKind::Se, 25);
    cfg.schedules = Schedules::fixed_steps(
        1.0,
        0.0,
        StepSizes {
            theta: 0.0,
            x: 0.0,
            y: 0.0,
        },
        25,
    );
    cfg.envelope.record_every = 1;
    cfg.runner.init = Some(InitSpec::splat(VarInit::Gaussian { scale: 1.0 }));
    let series = run::<f64>(&cfg).unwrap();

    // Rebuild the same initial swarm and mix it by hand.
    let w = cfg.topology.build::<f64>(5, 0).unwrap();
    let init = |salt: u64, dim: usize| -> Vec<Vec<f64>> {
        use rand_distr::{Distribution, StandardNormal};
        (0..5)
            .map(|i| {
                let mut rng = dsbo_core::derive_draw_key(42, salt, i, dsbo_core::Stream::Init).rng();
                (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>()
            })
            .collect()
    };
    let (mut t, mut x, mut y) = (init(0, 6), init(1, 3), init(2, 6));
    for row in &series.rows {
        let rec = row.record.unwrap();
        assert_eq!(rec.consensus_x, deviation_energy(&x));
        assert_eq!(rec.consensus_y, deviation_energy(&y));
        assert_eq!(rec.consensus_theta, deviation_energy(&t));
        t = w.mix(&t).unwrap();
        x = w.mix(&x).unwrap();
        y = w.mix(&y).unwrap();
    }
}

#[test]
fn noiseless_homogeneous_runs_decrease_stationarity_for_every_strategy() {
    for strategy in StrategyKind::ALL {
        let cfg = RunConfig {
            problem: ProblemSpec::Toy {
                n_agents: 5,
                dim: 4,
                a_step: 0.0,
                b_step: 0.0,
                noise: NoiseModel::noiseless(),
            },
            topology: TopologySpec::ring(5, 1.0 / 3.0),
            strategy,
            estimator: EstimatorSpec::default(),
            schedules: Schedules::fixed_steps(
                0.1,
                0.01,
                StepSizes {
                    theta: 0.1,
                    x: 0.01,
                    y: 0.01,
                },
                2000,
            ),
            envelope: EnvelopeConfig {
                record_every: 500,
                ..EnvelopeConfig::new(10.0)
            },
            runner: RunnerSection::default(),
        };
        let s = run::<f64>(&cfg).unwrap();
        let first = s.rows.first().unwrap().record.unwrap().grad_psi_sq;
        let last = s.rows.last().unwrap().record.unwrap().grad_psi_sq;
        assert!(last < first, "{strategy}: {first} -> {last}");
    }
}

/// Overstated smoothness and no closed-form prox, so a tiny inner budget makes
/// the metric oracle fail.
struct Stubborn;

impl BilevelProblem<f64> for Stubborn {
    fn n_agents(&self) -> usize {
        2
    }
    fn dims(&self) -> Dims {
        Dims { dx: 1, dy: 1 }
    }
    fn l1(&self) -> f64 {
        1.0
    }
    fn l2(&self) -> f64 {
        50.0
    }
    fn f_value(&self, _: usize, x: &[f64], y: &[f64]) -> f64 {
        0.5 * (x[0] * x[0] + y[0] * y[0])
    }
    fn g_value(&self, _: usize, _: &[f64], y: &[f64]) -> f64 {
        0.5 * y[0] * y[0]
    }
    fn f_gradient(&self, _: usize, x: &[f64], y: &[f64]) -> Gradient<f64> {
        Gradient {
            gx: x.to_vec(),
            gy: y.to_vec(),
        }
    }
    fn g_gradient(&self, _: usize, _: &[f64], y: &[f64]) -> Gradient<f64> {
        Gradient {
            gx: vec![0.0],
            gy: y.to_vec(),
        }
    }
}

#[test]
fn failed_metric_solves_become_gap_rows() {
    let mut cfg = toy_config(StrategyKind::Se, 10);
    cfg.topology = TopologySpec::of_kind(TopologyKind::Line, 2);
    cfg.envelope = EnvelopeConfig {
        inner_max_iters: 1,
        inner_tol: 1e-15,
        record_every: 3,
        ..EnvelopeConfig::new(1.0)
    };
    cfg.runner.init = Some(InitSpec::splat(VarInit::Explicit { values: vec![1.0] }));
    let s = run_with_problem(&Stubborn, None, &cfg).unwrap();
    assert_eq!(s.rows.len(), 4);
    assert!(s.rows.iter().all(|r| r.record.is_none()));
    assert_eq!(s.summary.gaps, 4);
}

#[test]
fn invalid_configs_are_rejected_before_iterating() {
    let base = toy_config(StrategyKind::Se, 10);
    let mut bad_p = base.clone();
    bad_p.schedules.p = 0.3;
    assert!(matches!(run::<f64>(&bad_p), Err(DsboError::InvalidParameter(_))));
    let mut bad_n = base.clone();
    bad_n.topology.n = Some(7);
    assert!(matches!(run::<f64>(&bad_n), Err(DsboError::Config(_))));
    let mut bad_init = base.clone();
    bad_init.runner.init = Some(InitSpec::splat(VarInit::Explicit { values: vec![1.0; 2] }));
    assert!(matches!(run::<f64>(&bad_init), Err(DsboError::Config(_))));
    let mut bad_gamma = base.clone();
    bad_gamma.envelope.gamma = -1.0;
    assert!(run::<f64>(&bad_gamma).is_err());
    let mut bad_noise = base;
    bad_noise.problem = ProblemSpec::Toy {
        n_agents: 5,
        dim: 3,
        a_step: 0.1,
        b_step: 0.05,
        noise: NoiseModel::minibatch(4),
    };
    assert!(matches!(run::<f64>(&bad_noise), Err(DsboError::Config(_))));
}

#[test]
fn out_of_range_gamma_warns_but_runs() {
    let mut cfg = toy_config(StrategyKind::Se, 5);
    cfg.envelope.gamma = 10.0;
    assert!(run::<f64>(&cfg).unwrap().gamma_range_warning.is_some());
    cfg.envelope.gamma = 0.01;
    assert!(run::<f64>(&cfg).unwrap().gamma_range_warning.is_none());
}

#[test]
fn as_written_topologies_still_run_with_warnings() {
    let mut cfg = toy_config(StrategyKind::Se, 5);
    cfg.topology = TopologySpec {
        mode: dsbo_core::BuildMode::AsWritten,
        ..TopologySpec::of_kind(TopologyKind::Line, 5)
    };
    let s = run::<f64>(&cfg).unwrap();
    assert!(!s.topology_warnings.is_empty());
}

#[test]
fn single_precision_runs_track_double_precision() {
    let cfg = toy_config(StrategyKind::GtAtc, 100);
    let a = run::<f64>(&cfg).unwrap();
    let b = run::<f32>(&cfg).unwrap();
    for (u, v) in a.final_xbar.iter().zip(&b.final_xbar) {
        assert!((u - v).abs() < 1e-4, "{u} vs {v}");
    }
}

#[test]
fn singleton_sweep_matches_run() {
    let cfg = toy_config(StrategyKind::Extra, 30);
    let sweep = run_sweep::<f64>(&cfg, &SweepGrid::default()).unwrap();
    assert_eq!(sweep.points.len(), 1);
    let direct = run::<f64>(&cfg).unwrap().summary;
    let from_sweep = sweep.points[0].runs[0].summary.clone().unwrap();
    assert_eq!(from_sweep.avg_grad_psi_sq, direct.avg_grad_psi_sq);
    assert_eq!(from_sweep.final_rel_err_x, direct.final_rel_err_x);
}

#[test]
fn seed_replicates_give_matching_statistics() {
    let cfg = toy_config(StrategyKind::Se, 20);
    let grid = SweepGrid {
        replicates: Some(10),
        ..Default::default()
    };
    let sweep = run_sweep::<f64>(&cfg, &grid).unwrap();
    let point = &sweep.points[0];
    assert_eq!(point.runs.len(), 10);
    let vals: Vec<f64> = point.runs.iter().map(|r| r.summary.as_ref().unwrap().avg_grad_psi_sq).collect();
    let a = dsbo_core::runner::stats::two_pass(&vals);
    let b = dsbo_core::runner::stats::streaming(&vals);
    assert!((a.mean - b.mean).abs() <= 1e-12 * a.mean.abs().max(1.0));
    assert!((a.std - b.std).abs() <= 1e-12 * a.std.abs().max(1.0));
    assert_eq!(point.avg_grad_psi_sq, checked_stats(&vals).unwrap());
}

#[test]
fn grid_is_the_cartesian_product() {
    let cfg = toy_config(StrategyKind::Se, 5);
    let grid = SweepGrid {
        strategy: Some(vec![StrategyKind::Se, StrategyKind::Ed]),
        gamma: Some(vec![0.1, 0.2, 0.3]),
        n_agents: Some(vec![4, 6]),
        topology: Some(vec![TopologySpec {
            a: Some(0.5),
            ..TopologySpec::of_kind(TopologyKind::Ring, 4)
        }]),
        ..Default::default()
    };
    let sweep = run_sweep::<f64>(&cfg, &grid).unwrap();
    assert_eq!(sweep.points.len(), 12);
    assert!(sweep.points.iter().all(|p| p.runs.iter().all(|r| r.summary.is_some())));
}

#[test]
fn identity_mixing_decouples_agents() {
    let w = WeightMatrix::<f64>::identity(3);
    let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
    assert_eq!(w.mix(&rows).unwrap(), rows);
}
