use std::collections::BTreeSet;

use dsbo_core::linalg::{deviation_energy, mean_rows};
use dsbo_core::topology::{build_dynamic_mh, build_exponential, build_line, build_ring, metropolis_weights};
use dsbo_core::{derive_draw_key, BuildMode, Schedules, Stream, WeightMatrix};
use proptest::prelude::*;

fn swarm(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), n)
}

fn random_graph(n: usize) -> impl Strategy<Value = Vec<BTreeSet<usize>>> {
    prop::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
        let mut nb = vec![BTreeSet::new(); n];
        let mut it = bits.into_iter();
        for i in 0..n {
            for j in i + 1..n {
                if it.next().unwrap_or(false) {
                    nb[i].insert(j);
                    nb[j].insert(i);
                }
            }
        }
        nb
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixing_preserves_the_average(rows in swarm(7, 3), a in 0.05f64..0.95) {
        let w = build_ring::<f64>(7, a).unwrap();
        let before = mean_rows(&rows);
        let after = mean_rows(&w.mix(&rows).unwrap());
        for (b, c) in before.iter().zip(&after) {
            prop_assert!((b - c).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn mixing_contracts_deviation_energy(rows in swarm(9, 2), a in 0.05f64..0.95) {
        let w = build_ring::<f64>(9, a).unwrap();
        let rho = w.spectral_report().unwrap().rho;
        let before = deviation_energy(&rows);
        let after = deviation_energy(&w.mix(&rows).unwrap());
        prop_assert!(after <= rho * rho * before + 1e-12);
    }

    #[test]
    fn metropolis_weights_are_valid_on_any_graph(nb in random_graph(8)) {
        let w = WeightMatrix::<f64>::custom(8, metropolis_weights::<f64>(&nb)).unwrap();
        let report = w.validate();
        // Disconnection is the only admissible violation.
        prop_assert!(report.is_doubly_stochastic(), "{:?}", report.violations);
        prop_assert_eq!(w.is_connected(), report.is_ok());
    }

    #[test]
    fn normalized_builders_are_valid(n in 3usize..40) {
        prop_assert!(build_line::<f64>(n, BuildMode::Normalized).unwrap().validate().is_ok());
        prop_assert!(build_exponential::<f64>(n, BuildMode::Normalized).unwrap().validate().is_ok());
        prop_assert!(build_ring::<f64>(n, 0.5).unwrap().validate().is_ok());
    }

    #[test]
    fn dynamic_rounds_are_valid(n in 3usize..20, seed in any::<u64>()) {
        let w = build_dynamic_mh::<f64>(n, 2, 3.min(n - 1), seed).unwrap();
        prop_assert!(w.validate().is_ok());
    }

    #[test]
    fn spectrum_is_bounded_and_leads_with_one(n in 3usize..20, a in 0.05f64..0.95) {
        let r = build_ring::<f64>(n, a).unwrap().spectral_report().unwrap();
        prop_assert!((r.eigenvalues[0] - 1.0).abs() < 1e-10);
        prop_assert!(r.rho < 1.0 && r.rho >= 0.0);
        prop_assert!(r.eigenvalues.iter().all(|l| l.abs() <= 1.0 + 1e-10));
    }

    #[test]
    fn draw_keys_are_injective(a in any::<(u64, u64, u32)>(), b in any::<(u64, u64, u32)>(), s in 0usize..4, t in 0usize..4) {
        let ka = derive_draw_key(a.0, a.1, a.2 as usize, Stream::ALL[s]);
        let kb = derive_draw_key(b.0, b.1, b.2 as usize, Stream::ALL[t]);
        prop_assert_eq!(ka == kb, a == b && s == t);
    }

    #[test]
    fn penalty_schedule_is_positive_and_nonincreasing(mu0 in 1e-3f64..10.0, p in 0.0f64..0.249, k in 0usize..1_000_000) {
        let s = Schedules::horizon_scaled(mu0, p, 1.0, 1.0, 10);
        let (now, next) = (s.mu_at(k), s.mu_at(k + 1));
        prop_assert!(now > 0.0 && next <= now);
        prop_assert_eq!(now, mu0 * ((k + 1) as f64).powf(-p));
    }
}
