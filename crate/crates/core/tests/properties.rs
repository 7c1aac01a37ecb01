use interp_lab::design::{excess_risk, generate_dataset, CovarianceSpec, Dataset, SignalSpec};
use interp_lab::flow::{oracle_threshold, run_flow, FlowConfig};
use interp_lab::interpolants::{basis_pursuit, check_certificate, lasso_coordinate_descent, min_l2_interpolant};
use interp_lab::numerics::{
    gaussian_pdf, gaussian_q, gaussian_q_inverse, mills_bounds, sample, simple_ols, soft_threshold, Ensemble, RngStream,
};
use interp_lab::theory::truncated_second_moment;
use proptest::prelude::*;

fn noise_dataset(n: usize, p: usize, seed: u64, ensemble: Ensemble) -> Dataset {
    let cov = CovarianceSpec::isotropic(p).unwrap();
    generate_dataset(
        &cov,
        &SignalSpec::pure_noise(),
        n,
        1.0,
        ensemble,
        RngStream::new(seed, 11),
    )
    .unwrap()
}

fn ensemble() -> impl Strategy<Value = Ensemble> {
    prop_oneof![
        Just(Ensemble::Gaussian),
        Just(Ensemble::Rademacher),
        Just(Ensemble::StudentT4)
    ]
}

// ±1 designs at tiny n repeat columns and break general position.
fn continuous() -> impl Strategy<Value = Ensemble> {
    prop_oneof![Just(Ensemble::Gaussian), Just(Ensemble::StudentT4)]
}

proptest! {
    #[test]
    fn tail_symmetry(x in -40.0f64..40.0) {
        prop_assert!((gaussian_q(x) + gaussian_q(-x) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn tail_inverse_round_trip(x in -6.0f64..6.0) {
        let back = gaussian_q_inverse(gaussian_q(x)).unwrap();
        // For x < 0, Q(x) sits just below 1 and is stored to an absolute
        // precision of 2^-53; the inverse cannot beat that divided by φ(x).
        let conditioning = if x < 0.0 { f64::EPSILON / gaussian_pdf(x) } else { 0.0 };
        prop_assert!((back - x).abs() <= 1e-9 + conditioning, "x = {x}, back = {back}");
    }

    #[test]
    fn soft_threshold_is_nonexpansive(a in -50.0f64..50.0, b in -50.0f64..50.0, k in 0.0f64..10.0) {
        let d = (soft_threshold(a, k).unwrap() - soft_threshold(b, k).unwrap()).abs();
        prop_assert!(d <= (a - b).abs() + 1e-13);
    }

    #[test]
    fn affine_data_fits_exactly(a in -5.0f64..5.0, b in 0.1f64..5.0, n in 3usize..40) {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * 0.37 + 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| a + b * x).collect();
        let fit = simple_ols(&xs, &ys).unwrap();
        prop_assert!(fit.r_squared >= 1.0 - 1e-12);
    }

    #[test]
    fn sampling_is_replayable(seed: u64, stream: u64, dist in ensemble()) {
        let s = RngStream::new(seed, stream);
        let a = sample(s, dist, 64);
        let b = sample(s, dist, 64);
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn generation_is_replayable(seed in 0u64..1000, dist in ensemble()) {
        let a = noise_dataset(7, 13, seed, dist);
        let b = noise_dataset(7, 13, seed, dist);
        prop_assert_eq!(a.phi, b.phi);
        prop_assert_eq!(a.y, b.y);
    }

    #[test]
    fn pure_noise_risk_is_squared_norm(seed in 0u64..1000, beta in prop::collection::vec(-3.0f64..3.0, 9)) {
        let ds = noise_dataset(5, 9, seed, Ensemble::Gaussian);
        let r = excess_risk(&beta, &ds).unwrap();
        let norm: f64 = beta.iter().map(|b| b * b).sum();
        prop_assert!(r >= 0.0);
        prop_assert_eq!(r, norm);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn basis_pursuit_contract(seed in 0u64..100_000, n in 3usize..12, extra in 1usize..30, dist in continuous()) {
        let ds = noise_dataset(n, n + extra, seed, dist);
        let bp = basis_pursuit(&ds, 1e-8).unwrap();
        prop_assert!(bp.residual_inf <= 1e-8 * ds.y.amax().max(1.0));
        prop_assert!(bp.active_set.len() <= n);
        let cert = check_certificate(&ds, &bp).unwrap();
        prop_assert!(cert.is_valid(1e-6), "{cert:?}");
        let l2 = min_l2_interpolant(&ds).unwrap();
        prop_assert!(bp.objective <= l2.l1_norm() * (1.0 + 1e-10));
    }

    #[test]
    fn lasso_gap_within_target(seed in 0u64..100_000, frac in 0.01f64..0.9) {
        let ds = noise_dataset(15, 40, seed, Ensemble::Gaussian);
        let lmax = (0..40)
            .map(|j| ds.column(j).iter().zip(ds.y.iter()).map(|(a, b)| a * b).sum::<f64>().abs())
            .fold(0.0, f64::max) / 15.0;
        let fit = lasso_coordinate_descent(&ds, frac * lmax, 1e-8, 100_000).unwrap();
        prop_assert!(fit.converged);
        prop_assert!(fit.duality_gap <= fit.gap_target);
    }

    #[test]
    fn flow_path_invariants(seed in 0u64..100_000, n in 5usize..20, extra in 1usize..40, c in 1.01f64..3.0) {
        let p = n + extra;
        let cov = CovarianceSpec::isotropic(p).unwrap();
        let ds = generate_dataset(&cov, &SignalSpec::sparse(2.min(p), 2.0), n, 0.5, Ensemble::Gaussian, RngStream::new(seed, 5)).unwrap();
        let rule = oracle_threshold(0.5f64.sqrt(), p, n, c).unwrap();
        let cfg = FlowConfig { run_past_stop: true, rho_floor: 1e-3, ..FlowConfig::default() };
        let tr = run_flow(&ds, &cfg, Some(&rule)).unwrap();
        prop_assert!(tr.max_rho_increase <= 1e-9);
        prop_assert!(tr.rho.windows(2).all(|w| w[1] - w[0] <= 1e-9));
        let eps = tr.step_eps;
        for w in tr.l1_norm.windows(2) {
            prop_assert!((w[1] - w[0]).abs() <= eps * (1.0 + 1e-9));
        }
        if let (Some(row), Some(thr)) = (tr.stop_row, tr.threshold) {
            prop_assert!(tr.rho[row] <= thr);
            prop_assert!(tr.rho[..row].iter().all(|&r| r > thr));
        }
    }
}

#[test]
fn degenerate_designs_are_reported_not_returned() {
    let mut flagged = 0;
    for seed in 0..400 {
        let ds = noise_dataset(7, 16, seed, Ensemble::Rademacher);
        match basis_pursuit(&ds, 1e-8) {
            Ok(bp) => assert!(check_certificate(&ds, &bp).unwrap().is_valid(1e-6)),
            Err(_) => flagged += 1,
        }
    }
    assert!(flagged < 400);
}

#[test]
fn mills_and_moment_sandwiches() {
    for i in 0..=800 {
        let k = 2.0 + 0.01 * i as f64;
        let (lo, hi) = mills_bounds(k).unwrap();
        let q = gaussian_q(k);
        assert!(lo <= q && q <= hi, "kappa = {k}");
        if k >= 3.0 {
            let m2 = truncated_second_moment(k).unwrap().value;
            let phi = gaussian_pdf(k);
            let lower = 2.0 * (-1.5f64).exp() / 3.0 * phi / k.powi(3);
            let upper = 2.0 * phi * (2.0 / k.powi(3) + 3.0 / k.powi(5));
            assert!(lower <= m2 && m2 <= upper, "kappa = {k}");
        }
    }
}
