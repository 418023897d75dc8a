use nalgebra::DMatrix;
use proptest::prelude::*;

use nullrec_core::coefficients::build_catalog_entry;
use nullrec_core::deterministic::{fundamental_matrix, psd_sqrt, solve_ode};
use nullrec_core::limit::sample_v;
use nullrec_core::localtime::{local_time_occupation, local_time_tanaka};
use nullrec_core::paths::{sample_brownian, sample_ensemble, sample_ensemble_serial};
use nullrec_core::sde::{simulate_pair_general, simulate_y_unit_phi};
use nullrec_core::stats::{ks_two_sample, pairwise_sum, EmpiricalLaw};
use nullrec_core::timechange::compute_time_change;
use nullrec_core::verify::VerificationReport;
use nullrec_core::{Params, SeedSpec, TimeGrid};

fn params(pairs: &[(&str, f64)]) -> Params {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn coarsen_keeps_nodes(n in 1usize..50, stride in 1usize..6, t_end in 0.1f64..5.0) {
        let g = TimeGrid::new(0.0, t_end, n * stride).unwrap();
        let c = g.coarsen(stride).unwrap();
        for k in 0..=n {
            prop_assert!((c.node(k) - g.node(k * stride)).abs() < 1e-12);
        }
        prop_assert_eq!(c.refine(stride).unwrap(), g);
    }

    #[test]
    fn seeded_paths_are_reproducible(master in any::<u64>(), stream in 0u64..1000) {
        let g = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let s = SeedSpec::new(master, stream);
        let a = sample_brownian(&g, 2, s).unwrap();
        prop_assert_eq!(&a, &sample_brownian(&g, 2, s).unwrap());
        prop_assert_ne!(a, sample_brownian(&g, 2, s.with_stream(stream + 1)).unwrap());
    }

    #[test]
    fn local_time_is_monotone_and_flat_off_level(seed in any::<u64>(), level in -0.5f64..0.5) {
        let g = TimeGrid::new(0.0, 1.0, 4000).unwrap();
        let w = sample_brownian(&g, 1, SeedSpec::new(seed, 0)).unwrap();
        let delta = g.step().sqrt();
        let occ = local_time_occupation(&w, level, delta).unwrap();
        let tan = local_time_tanaka(&w, level).unwrap();
        prop_assert_eq!(occ.value(0), 0.0);
        for k in 0..g.n_steps {
            prop_assert!(occ.value(k + 1) >= occ.value(k));
            prop_assert!(tan.value(k + 1) >= tan.value(k));
            if (w.get(k, 0) - level).abs() > delta {
                prop_assert_eq!(occ.value(k + 1), occ.value(k));
            }
        }
    }

    #[test]
    fn v_is_flat_where_local_time_is_flat(seed in any::<u64>()) {
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let v = sample_v(&g, 2, SeedSpec::new(seed, 3), 1e-4).unwrap();
        for k in 0..g.n_steps {
            if v.local_time.value(k + 1) == v.local_time.value(k) {
                prop_assert_eq!(v.v.state(k + 1), v.v.state(k));
            }
        }
    }

    #[test]
    fn cocycle(kappa in 0.1f64..2.0, y0 in -1.0f64..1.0, a in 0usize..=200, b in 0usize..=200, c in 0usize..=200) {
        let cs = build_catalog_entry("gaussian_bump", &params(&[("kappa", kappa)])).unwrap();
        let g = TimeGrid::new(0.0, 2.0, 200).unwrap();
        let ode = solve_ode(&cs, &[y0, -y0], &g).unwrap();
        let fm = fundamental_matrix(&cs, &ode).unwrap();
        let lhs = fm.between(a, c);
        let rhs = fm.between(a, b) * fm.between(b, c);
        prop_assert!((lhs - rhs).norm() < 1e-8);
    }

    #[test]
    fn matrix_sqrt_round_trip(entries in proptest::collection::vec(-2.0f64..2.0, 9)) {
        let m = DMatrix::from_row_slice(3, 3, &entries);
        let a = &m * m.transpose();
        let s = psd_sqrt(&a).unwrap();
        prop_assert!((&s - s.transpose()).norm() < 1e-12);
        prop_assert!((&s * &s - &a).norm() <= 1e-9 * a.norm().max(1.0));
    }

    #[test]
    fn time_change_round_trip(seed in any::<u64>(), amp in -0.5f64..1.0, eps in 0.1f64..0.5) {
        let cs = build_catalog_entry("gaussian_bump", &params(&[("psi2_amp", amp)])).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 2000).unwrap();
        let traj = simulate_pair_general(&cs, eps, 0.0, &[0.2, 0.1], &g, SeedSpec::new(seed, 0)).unwrap();
        let tc = compute_time_change(&traj, &cs).unwrap();
        prop_assert_eq!(tc.violations, 0);
        for k in (0..=g.n_steps).step_by(37) {
            prop_assert!((tc.t_of_s(tc.s_of_t[k]) - g.node(k)).abs() < 1e-9);
        }
        for w in tc.s_of_t.windows(2) {
            let slope = (w[1] - w[0]) / g.step();
            prop_assert!(slope >= cs.c1 * cs.c1 - 1e-9 && slope <= cs.c2 * cs.c2 + 1e-9);
        }
    }

    #[test]
    fn prelimit_simulation_is_deterministic(seed in any::<u64>(), eps in 0.05f64..1.0) {
        let cs = build_catalog_entry("oscillator", &Params::new()).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 500).unwrap();
        let a = simulate_y_unit_phi(&cs, eps, &[1.0, 0.0], &g, SeedSpec::new(seed, 1)).unwrap();
        let b = simulate_y_unit_phi(&cs, eps, &[1.0, 0.0], &g, SeedSpec::new(seed, 1)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ks_is_a_symmetric_distance(a in proptest::collection::vec(-5.0f64..5.0, 1..60), b in proptest::collection::vec(-5.0f64..5.0, 1..60)) {
        let la = EmpiricalLaw::new(a).unwrap();
        let lb = EmpiricalLaw::new(b).unwrap();
        let d = ks_two_sample(&la, &lb);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_two_sample(&lb, &la));
        prop_assert_eq!(ks_two_sample(&la, &la), 0.0);
    }

    #[test]
    fn pairwise_sum_matches_naive(xs in proptest::collection::vec(-1e3f64..1e3, 0..500)) {
        let naive: f64 = xs.iter().sum();
        prop_assert!((pairwise_sum(&xs) - naive).abs() <= 1e-9 * (1.0 + naive.abs()));
    }
}

#[test]
fn ensemble_does_not_depend_on_scheduling() {
    let g = TimeGrid::new(0.0, 1.0, 300).unwrap();
    let a = sample_ensemble(&g, 1, 40, 9).unwrap();
    let b = sample_ensemble_serial(&g, 1, 40, 9).unwrap();
    assert_eq!(a, b);
    for k in 0..a.len() {
        assert_eq!(a.paths[k], sample_brownian(&g, 1, a.seed_of(k)).unwrap());
    }
}

#[test]
fn report_json_round_trip() {
    let mut r = VerificationReport::new("demo");
    r.param("eps", vec![0.1, 0.05]);
    r.push_estimate("m", 1.5, 0.1);
    r.checks
        .push(nullrec_core::verify::Check::at_most("m", 1.5, 2.0));
    r.finish();
    let back: VerificationReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
}
