//! Fast built-in consistency checks, runnable from the command line.

use serde::Serialize;

use crate::directions::{deterministic_directions, Schedules, StepSizes};
use crate::envelope::{grad_psi, moreau_value, psi_value, EnvelopeConfig};
use crate::linalg::{mean_rows, norm};
use crate::problems::{lower_value, BilevelProblem, QuadraticToy};
use crate::runner::{run, ProblemSpec, RunConfig, RunnerSection};
use crate::strategies::{StepContext, StrategyKind, SwarmState};
use crate::topology::{build_dynamic_mh, build_ring, TopologySpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> SelfCheck {
    SelfCheck { name, passed, detail }
}

pub fn run_selftest() -> Vec<SelfCheck> {
    vec![
        ring_spectrum(),
        mixing_preserves_mean(),
        dynamic_graph_valid(),
        envelope_gradient(),
        envelope_below_lower(),
        tracking_identity(),
        determinism(),
    ]
}

fn ring_spectrum() -> SelfCheck {
    let n = 10;
    let a = 0.5;
    let expected = a + (1.0 - a) * (2.0 * std::f64::consts::PI / n as f64).cos();
    match build_ring::<f64>(n, a).and_then(|w| w.spectral_report()) {
        Ok(r) => check(
            "ring_spectrum",
            (r.rho - expected).abs() < 1e-10,
            format!("rho={:.12} expected {:.12}", r.rho, expected),
        ),
        Err(e) => check("ring_spectrum", false, e.to_string()),
    }
}

fn mixing_preserves_mean() -> SelfCheck {
    let w = build_ring::<f64>(7, 0.4).expect("valid ring");
    let rows: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64 - 3.0]).collect();
    let before = mean_rows(&rows);
    let after = mean_rows(&w.mix(&rows).expect("shapes match"));
    let drift = norm(&crate::linalg::sub(&before, &after));
    check("mixing_preserves_mean", drift < 1e-12, format!("mean drift {drift:.3e}"))
}

fn dynamic_graph_valid() -> SelfCheck {
    let bad = (0..20u64)
        .filter(|&s| {
            build_dynamic_mh::<f64>(12, 2, 4, s)
                .map(|w| !(w.validate().is_ok() && w.is_connected()))
                .unwrap_or(true)
        })
        .count();
    check("dynamic_graph_valid", bad == 0, format!("{bad} of 20 rounds invalid"))
}

fn envelope_gradient() -> SelfCheck {
    let toy = QuadraticToy::<f64>::with_spread(4, 2, 0.1, 0.05);
    let cfg = EnvelopeConfig::new(0.5);
    let (x, y) = (vec![0.3, -0.2], vec![0.1, 0.4, -0.5, 0.2]);
    let mu = 0.7;
    let Ok(g) = grad_psi(&toy, &x, &y, mu, &cfg) else {
        return check("envelope_gradient", false, "inner solve failed".into());
    };
    let analytic: Vec<f64> = g.flatten();
    let point: Vec<f64> = x.iter().chain(&y).copied().collect();
    let h = 1e-5;
    let psi = |p: &[f64]| psi_value(&toy, &p[..2], &p[2..], mu, &cfg).unwrap_or(f64::NAN);
    let mut worst: f64 = 0.0;
    for j in 0..point.len() {
        let (mut plus, mut minus) = (point.clone(), point.clone());
        plus[j] += h;
        minus[j] -= h;
        let fd = (psi(&plus) - psi(&minus)) / (2.0 * h);
        worst = worst.max((fd - analytic[j]).abs());
    }
    check("envelope_gradient", worst < 1e-6, format!("max |fd - analytic| = {worst:.3e}"))
}

fn envelope_below_lower() -> SelfCheck {
    let toy = QuadraticToy::<f64>::with_spread(3, 1, 0.2, 0.1);
    let cfg = EnvelopeConfig::new(0.3);
    let (x, y) = (vec![0.8], vec![-0.4, 1.1]);
    match moreau_value(&toy, &x, &y, &cfg) {
        Ok(v) => {
            let g = lower_value(&toy, &x, &y);
            check("envelope_below_lower", v <= g + 1e-12, format!("V={v:.6} G={g:.6}"))
        }
        Err(e) => check("envelope_below_lower", false, e.to_string()),
    }
}

fn tracking_identity() -> SelfCheck {
    let toy = QuadraticToy::<f64>::with_spread(5, 1, 0.3, 0.2);
    let w = build_ring::<f64>(5, 0.5).expect("valid ring");
    let d = toy.dims();
    let mut swarm = SwarmState::zeros(5, d);
    let ctx = StepContext {
        w: &w,
        steps: StepSizes {
            theta: 0.05,
            x: 0.05,
            y: 0.05,
        },
        mu: 1.0,
        gamma: 0.5,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let est: Vec<_> = (0..5)
            .map(|i| {
                let (x, y, t) = swarm.agent(i);
                deterministic_directions(&toy, i, x, y, t, 1.0, 0.5).expect("valid shapes")
            })
            .collect();
        if StrategyKind::GtNonAtc.step(&mut swarm, &ctx, &est).is_err() {
            return check("tracking_identity", false, "step failed".into());
        }
        let tracked = mean_rows(&swarm.trackers.x);
        let est_x: Vec<Vec<f64>> = est.iter().map(|e| e.x.clone()).collect();
        let direct = mean_rows(&est_x);
        worst = worst.max(norm(&crate::linalg::sub(&tracked, &direct)));
    }
    check("tracking_identity", worst < 1e-12, format!("max tracker drift {worst:.3e}"))
}

fn determinism() -> SelfCheck {
    let cfg = RunConfig {
        problem: ProblemSpec::Toy {
            n_agents: 4,
            dim: 2,
            a_step: 0.1,
            b_step: 0.05,
            noise: crate::problems::NoiseModel::gaussian(0.1, 0.1),
        },
        topology: TopologySpec::ring(4, 0.5),
        strategy: StrategyKind::GtAtc,
        estimator: Default::default(),
        schedules: Schedules::fixed_steps(
            1.0,
            0.1,
            StepSizes {
                theta: 0.05,
                x: 0.05,
                y: 0.05,
            },
            50,
        ),
        envelope: EnvelopeConfig::new(0.5),
        runner: RunnerSection {
            base_seed: 7,
            ..Default::default()
        },
    };
    match (run::<f64>(&cfg), run::<f64>(&cfg)) {
        (Ok(a), Ok(b)) => {
            let same = a.final_xbar == b.final_xbar && a.final_ybar == b.final_ybar;
            check(
                "determinism",
                same,
                if same { "bit-identical".into() } else { "runs differ".into() },
            )
        }
        (Err(e), _) | (_, Err(e)) => check("determinism", false, e.to_string()),
    }
}
