use dsbo_core::directions::{deterministic_directions, stochastic_directions, EstimatorKind, EstimatorState};
use dsbo_core::problems::LogisticParams;
use dsbo_core::{BilevelProblem, LogisticHyperopt, NoiseModel, QuadraticToy, SampleKeys};

/// Per-coordinate Monte Carlo mean and standard error of the sampled directions.
fn monte_carlo(
    p: &dyn BilevelProblem<f64>,
    agent: usize,
    point: (&[f64], &[f64], &[f64]),
    noise: &NoiseModel,
    samples: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (x, y, theta) = point;
    let mut sum: Vec<f64> = Vec::new();
    let mut sum_sq: Vec<f64> = Vec::new();
    for s in 0..samples {
        let keys = SampleKeys::derive(11, s as u64, agent);
        let d = stochastic_directions(p, agent, x, y, theta, 0.7, 0.5, noise, &keys).unwrap();
        let flat: Vec<f64> = d.theta.iter().chain(&d.x).chain(&d.y).copied().collect();
        if sum.is_empty() {
            sum = vec![0.0; flat.len()];
            sum_sq = vec![0.0; flat.len()];
        }
        for (j, v) in flat.iter().enumerate() {
            sum[j] += v;
            sum_sq[j] += v * v;
        }
    }
    let m = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let se = sum_sq
        .iter()
        .zip(&mean)
        .map(|(q, mu)| ((q / m - mu * mu).max(0.0) / m).sqrt())
        .collect();
    (mean, se)
}

fn assert_unbiased(p: &dyn BilevelProblem<f64>, noise: &NoiseModel, point: (&[f64], &[f64], &[f64])) {
    let (x, y, theta) = point;
    for agent in 0..p.n_agents() {
        let exact = deterministic_directions(p, agent, x, y, theta, 0.7, 0.5).unwrap();
        let exact: Vec<f64> = exact.theta.iter().chain(&exact.x).chain(&exact.y).copied().collect();
        let (mean, se) = monte_carlo(p, agent, point, noise, 4000);
        for j in 0..exact.len() {
            let band = 3.0 * se[j] + 1e-12;
            assert!(
                (mean[j] - exact[j]).abs() <= band,
                "agent {agent} coord {j}: {} vs {} (3σ = {band})",
                mean[j],
                exact[j]
            );
        }
    }
}

#[test]
fn gaussian_directions_are_unbiased() {
    let toy = QuadraticToy::<f64>::with_spread(3, 2, 0.2, 0.1);
    let (x, y, theta) = (vec![0.4, -0.3], vec![0.2, 0.1, -0.5, 0.8], vec![0.0, 0.3, -0.1, 0.2]);
    assert_unbiased(&toy, &NoiseModel::gaussian(0.8, 0.6), (&x, &y, &theta));
}

#[test]
fn minibatch_directions_are_unbiased() {
    let params = LogisticParams {
        n_agents: 2,
        features: 3,
        train_per_agent: 40,
        val_per_agent: 25,
        noise_rate: 0.1,
    };
    let p = LogisticHyperopt::<f64>::generate(&params, 4).unwrap();
    let d = p.dims();
    let x = vec![0.1; d.dx];
    let y: Vec<f64> = (0..d.dy).map(|j| 0.2 * (j as f64).sin()).collect();
    let theta: Vec<f64> = (0..d.dy).map(|j| 0.1 * (j as f64).cos()).collect();
    assert_unbiased(&p, &NoiseModel::minibatch(8), (&x, &y, &theta));
}

#[test]
fn gaussian_noise_has_requested_energy() {
    let toy = QuadraticToy::<f64>::with_spread(1, 4, 0.0, 0.0);
    let noise = NoiseModel::gaussian(0.5, 0.0);
    let (x, y) = (vec![0.0; 4], vec![0.0; 8]);
    let exact = toy.f_gradient(0, &x, &y).flatten();
    let samples = 20_000;
    let energy: f64 = (0..samples)
        .map(|s| {
            let keys = SampleKeys::derive(3, s, 0);
            let g = toy.f_gradient_sample(0, &x, &y, &noise, &keys.f).flatten();
            g.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum::<f64>()
        / samples as f64;
    assert!((energy - 0.25).abs() < 0.01, "E‖noise‖² = {energy}");
}

#[test]
fn shared_lower_sample_cancels_in_x_direction_at_theta_equal_y() {
    // With θ = y the two ∇_x g evaluations coincide, including their noise.
    let toy = QuadraticToy::<f64>::with_spread(2, 3, 0.1, 0.1);
    let noise = NoiseModel::gaussian(0.0, 5.0);
    let (x, y) = (vec![0.3, 0.1, -0.2], vec![0.5, 0.4, 0.3, -0.1, 0.2, 0.0]);
    for s in 0..20 {
        let keys = SampleKeys::derive(8, s, 1);
        let d = stochastic_directions(&toy, 1, &x, &y, &y, 0.4, 0.5, &noise, &keys).unwrap();
        let exact = deterministic_directions(&toy, 1, &x, &y, &y, 0.4, 0.5).unwrap();
        for (a, b) in d.x.iter().zip(&exact.x) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn same_key_reproduces_the_same_direction() {
    let toy = QuadraticToy::<f64>::with_spread(3, 2, 0.1, 0.1);
    let noise = NoiseModel::gaussian(1.0, 1.0);
    let (x, y) = (vec![0.3, 0.1], vec![0.5, 0.4, 0.3, -0.1]);
    let keys = SampleKeys::derive(1, 2, 0);
    let a = stochastic_directions(&toy, 0, &x, &y, &y, 0.4, 0.5, &noise, &keys).unwrap();
    let b = stochastic_directions(&toy, 0, &x, &y, &y, 0.4, 0.5, &noise, &keys).unwrap();
    assert_eq!(a, b);
    let other = stochastic_directions(&toy, 0, &x, &y, &y, 0.4, 0.5, &noise, &SampleKeys::derive(1, 3, 0)).unwrap();
    assert_ne!(a, other);
}

#[test]
fn storm_is_exact_when_the_oracle_is_noiseless() {
    let toy = QuadraticToy::<f64>::with_spread(2, 2, 0.1, 0.1);
    let mut est = EstimatorState::new(EstimatorKind::Storm, 0.3);
    let points = [
        (vec![0.0, 0.1], vec![0.2, 0.3, 0.1, 0.0]),
        (vec![0.5, -0.2], vec![0.1, 0.1, 0.4, 0.2]),
        (vec![1.0, 0.3], vec![-0.3, 0.2, 0.0, 0.6]),
    ];
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for (x, y) in &points {
        let raw = deterministic_directions(&toy, 0, x, y, y, 0.5, 0.5).unwrap();
        let reeval = prev
            .as_ref()
            .map(|(px, py)| deterministic_directions(&toy, 0, px, py, py, 0.5, 0.5).unwrap());
        let out = est.apply(raw.clone(), reeval.as_ref()).unwrap();
        for (a, b) in out.x.iter().zip(&raw.x).chain(out.y.iter().zip(&raw.y)) {
            assert!((a - b).abs() < 1e-12);
        }
        prev = Some((x.clone(), y.clone()));
    }
}

#[test]
fn momentum_reduces_variance_at_a_fixed_point() {
    let toy = QuadraticToy::<f64>::with_spread(1, 1, 0.0, 0.0);
    let noise = NoiseModel::gaussian(1.0, 1.0);
    let (x, y) = (vec![0.2], vec![0.1, 0.3]);
    let exact = deterministic_directions(&toy, 0, &x, &y, &y, 1.0, 1.0).unwrap();
    let mut raw_err = 0.0;
    let mut mom_err = 0.0;
    let mut est = EstimatorState::new(EstimatorKind::Momentum, 0.1);
    let steps = 5000;
    for k in 0..steps {
        let keys = SampleKeys::derive(2, k, 0);
        let raw = stochastic_directions(&toy, 0, &x, &y, &y, 1.0, 1.0, &noise, &keys).unwrap();
        raw_err += (raw.x[0] - exact.x[0]).powi(2);
        let m = est.apply(raw, None).unwrap();
        if k >= 100 {
            mom_err += (m.x[0] - exact.x[0]).powi(2);
        }
    }
    let raw_var = raw_err / steps as f64;
    let mom_var = mom_err / (steps - 100) as f64;
    // Stationary variance of an EMA is ρ/(2−ρ) times the raw variance.
    assert!(mom_var < 0.2 * raw_var, "raw {raw_var}, momentum {mom_var}");
}
