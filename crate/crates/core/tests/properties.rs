mod common;

use common::*;
use ergolq::analytic1d::{
    abg_control_noise, cost_drift_only, h_drift_only, h_inf_drift_only, moments_drift_only, regularized_closed_form_drift_only,
    DriftOnly, ControlNoise,
};
use ergolq::ergodic::{
    classify, geometric_schedule, regularization_trace, solve_regularized, ClassifyOptions, Verdict,
};
use ergolq::linalg::{fro, min_sym_eig};
use ergolq::model::{f_of_theta, find_stabilizer, is_stabilizer, CostWeights, LinearSystem, Strategy};
use ergolq::riccati::{
    check_h2, check_h3, l_of_pi, m_theta_pi, newton_kleinman, pinv, q_hat, q_theta_pi, q_theta_pi_via_l, r_of_pi,
    upsilon, NkOptions, PinvPolicy,
};
use ergolq::stationary::{cost_representation, ergodic_cost, moment_drift, stationary_moments};
use ergolq::{DMatrix, DVector, Error};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

/// Random admissible strategies around `theta`, at several perturbation scales.
fn admissible_around(
    rng: &mut ChaCha8Rng,
    sys: &LinearSystem<f64>,
    theta: &DMatrix<f64>,
    v: &DVector<f64>,
    count: usize,
) -> Vec<Strategy<f64>> {
    let (n, m) = (sys.n(), sys.m());
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 50 * count {
        attempts += 1;
        let scale = 10f64.powf(rng.random_range(-3.0..0.5));
        let cand = theta + normal_matrix(rng, m, n, scale);
        if is_stabilizer(sys, &cand) {
            out.push(Strategy::new(cand, v + normal_vector(rng, m, 3.0 * scale)));
        }
    }
    out
}

fn dims() -> impl proptest::strategy::Strategy<Value = (usize, usize, usize)> {
    (1usize..=3, 1usize..=3, 1usize..=2)
}

proptest! {
    #![proptest_config(cfg(64))]

    #[test]
    fn f_of_theta_is_symmetric(seed in any::<u64>(), (n, m, d) in dims()) {
        let mut r = rng(seed);
        let sys = wild_system(&mut r, n, m, d);
        let f = f_of_theta(&sys, &normal_matrix(&mut r, m, n, 2.0)).unwrap();
        prop_assert_eq!(&f, &f.transpose());
    }

    #[test]
    fn scalar_stabilizer_matches_formula(
        a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64, d in -3.0..3.0f64, theta in -10.0..10.0f64,
    ) {
        let sys = LinearSystem::scalar(a, b, c, d, 0.0, 1.0);
        let f = 2.0 * (a + b * theta) + (c + d * theta).powi(2);
        prop_assume!(f.abs() > 1e-6);
        prop_assert_eq!(is_stabilizer(&sys, &m1x1(theta)), f < 0.0);
    }

    #[test]
    fn stabilizer_invariant_under_orthogonal_change(seed in any::<u64>(), (n, m, d) in dims()) {
        let mut r = rng(seed);
        let sys = wild_system(&mut r, n, m, d);
        let u = normal_matrix(&mut r, n, n, 1.0).qr().q();
        let moved = LinearSystem::new(
            u.transpose() * &sys.a * &u,
            u.transpose() * &sys.b,
            sys.c.iter().map(|c| u.transpose() * c * &u).collect(),
            sys.d.iter().map(|d| u.transpose() * d).collect(),
            u.transpose() * &sys.drift,
            sys.sigma.iter().map(|s| u.transpose() * s).collect(),
        ).unwrap();
        for _ in 0..10 {
            let theta = normal_matrix(&mut r, m, n, 1.5);
            let f = f_of_theta(&sys, &theta).unwrap();
            let top = ergolq::linalg::max_sym_eig(&f);
            prop_assume!(top.abs() > 1e-6 * (1.0 + fro(&f)));
            prop_assert_eq!(is_stabilizer(&sys, &theta), is_stabilizer(&moved, &(&theta * &u)));
        }
    }

    #[test]
    fn representation_invariance(seed in any::<u64>(), (n, m, d) in dims()) {
        let mut r = rng(seed);
        let sys = random_system(&mut r, n, m, d);
        let w = indefinite_weights(&mut r, n, m);
        let theta = find_stabilizer(&sys);
        prop_assume!(theta.is_ok());
        let st = Strategy::new(theta.unwrap(), normal_vector(&mut r, m, 1.0));
        let e = ergodic_cost(&sys, &w, &st).unwrap();
        for _ in 0..4 {
            let pi = symmetric(&mut r, n, 2.0);
            let rep = cost_representation(&sys, &w, &st, &pi).unwrap();
            prop_assert!((rep - e).abs() <= 1e-8 * (1.0 + e.abs()), "rep {rep} vs {e}");
        }
    }

    #[test]
    fn moments_are_stationary_and_psd(seed in any::<u64>(), (n, m, d) in dims()) {
        let mut r = rng(seed);
        let sys = random_system(&mut r, n, m, d);
        let theta = find_stabilizer(&sys);
        prop_assume!(theta.is_ok());
        let st = Strategy::new(theta.unwrap(), normal_vector(&mut r, m, 1.0));
        let mo = stationary_moments(&sys, &st).unwrap();
        let (d1, d2) = moment_drift(&sys, &st, &mo).unwrap();
        let scale = 1.0 + mo.m2.norm();
        prop_assert!(d1.norm() <= 1e-8 * scale && d2.norm() <= 1e-8 * scale, "{} {}", d1.norm(), d2.norm());
        prop_assert!(mo.covariance_is_psd());
    }

    #[test]
    fn scalar_moments_match_closed_form(
        a in -2.0..2.0f64, c in -2.0..2.0f64, b in -2.0..2.0f64, sigma in -2.0..2.0f64,
        slack in 0.05..5.0f64, v in -5.0..5.0f64,
    ) {
        let theta = -(2.0 * a + c * c) / 2.0 - slack;
        let (sys, _) = drift_only(a, c, b, sigma, 0.0, 0.0);
        let p = DriftOnly { a, c, b, sigma, q: 0.0, s: 0.0 };
        let mo = stationary_moments(&sys, &Strategy::scalar(theta, v)).unwrap();
        let (m1, m2) = moments_drift_only(&p, &theta, &v).unwrap();
        prop_assert!((mo.m1[0] - m1).abs() <= 1e-12 * m1.abs().max(1.0));
        prop_assert!((mo.m2[(0, 0)] - m2).abs() <= 1e-12 * m2.abs().max(1.0));
    }

    #[test]
    fn pinv_penrose_axioms(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6, rank in 0usize..6) {
        let mut r = rng(seed);
        let k = rank.min(rows).min(cols);
        let m = normal_matrix(&mut r, rows, k, 1.0) * normal_matrix(&mut r, k, cols, 1.0);
        let p = pinv(&m, &PinvPolicy::default());
        let tol = 1e-10 * (1.0 + m.norm());
        prop_assert!((&m * &p * &m - &m).norm() <= tol);
        prop_assert!((&p * &m * &p - &p).norm() <= tol * (1.0 + p.norm()));
        prop_assert!(((&m * &p) - (&m * &p).transpose()).norm() <= tol);
        prop_assert!(((&p * &m) - (&p * &m).transpose()).norm() <= tol);
    }

    #[test]
    fn q_theta_pi_two_forms_agree(seed in any::<u64>(), (n, m, d) in dims()) {
        let mut r = rng(seed);
        let sys = wild_system(&mut r, n, m, d);
        let w = indefinite_weights(&mut r, n, m);
        let theta = normal_matrix(&mut r, m, n, 1.0);
        let pi = symmetric(&mut r, n, 1.0);
        let a = q_theta_pi(&sys, &w, &theta, &pi);
        let b = q_theta_pi_via_l(&sys, &w, &theta, &pi);
        prop_assert!((&a - &b).norm() <= 1e-10 * (1.0 + a.norm()));
    }

    /// `Π` and weights built so that `R + ΣDᵀΠD ⪰ 0` (possibly singular) and
    /// `ℛ(L_Π) ⊆ ℛ(R + ΣDᵀΠD)`.
    #[test]
    fn minimum_property_and_consistency(seed in any::<u64>(), (n, m, d) in dims(), rank in 0usize..=3) {
        let mut r = rng(seed);
        let sys = wild_system(&mut r, n, m, d);
        let pi = symmetric(&mut r, n, 1.0);
        let target = psd(&mut r, m, rank.min(m), 0.0);
        let dpd = sys.d.iter().fold(DMatrix::zeros(m, m), |acc, dk| acc + dk.transpose() * &pi * dk);
        let l_target = &target * normal_matrix(&mut r, m, n, 1.0);
        let zero = CostWeights::new(n, m, symmetric(&mut r, n, 1.0), DMatrix::zeros(m, n), DMatrix::zeros(m, m), DVector::zeros(n), DVector::zeros(m)).unwrap();
        let s = &l_target - l_of_pi(&sys, &zero, &pi);
        let w = CostWeights::new(n, m, zero.q.clone(), s, &target - dpd, DVector::zeros(n), DVector::zeros(m)).unwrap();
        let policy = PinvPolicy::default();
        let theta0 = upsilon(&sys, &w, &pi, &normal_matrix(&mut r, m, n, 1.0), &policy).unwrap();
        let q0 = q_theta_pi(&sys, &w, &theta0, &pi);
        let qh = q_hat(&sys, &w, &pi, &policy);
        prop_assert!((&qh - &q0).norm() <= 1e-10 * (1.0 + q0.norm()), "{}", (&qh - &q0).norm());
        prop_assert!((r_of_pi(&sys, &w, &pi) - &target).norm() <= 1e-10 * (1.0 + target.norm()));
        for _ in 0..5 {
            let theta = normal_matrix(&mut r, m, n, 2.0);
            let gap = q_theta_pi(&sys, &w, &theta, &pi) - &q0;
            prop_assert!(min_sym_eig(&gap) >= -1e-10 * (1.0 + gap.norm()), "{}", min_sym_eig(&gap));
        }
    }
}

proptest! {
    #![proptest_config(cfg(32))]

    #[test]
    fn nk_residual_is_monotone(seed in any::<u64>(), (n, m, d) in dims()) {
        let mut r = rng(seed);
        let sys = random_system(&mut r, n, m, d);
        let w = definite_weights(&mut r, n, m);
        let theta0 = find_stabilizer(&sys);
        prop_assume!(theta0.is_ok());
        let theta0 = theta0.unwrap();
        let sol = newton_kleinman(&sys, &w, &theta0, &NkOptions::default());
        // Kleinman updates stay mean-square stable but may leave the F(Θ) ≺ 0 region.
        prop_assume!(!matches!(sol, Err(Error::LostStability { .. })));
        let sol = sol.unwrap();
        prop_assert!(sol.residual <= 1e-12 * (1.0 + sol.p.norm()) * 10.0);
        for pair in sol.residual_trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12 * (1.0 + sol.p.norm()), "{:?}", sol.residual_trace);
        }
    }

    #[test]
    fn h3_certificate_is_optimal(seed in any::<u64>(), (n, m, d) in dims()) {
        let mut r = rng(seed);
        let sys = random_system(&mut r, n, m, d);
        let w = definite_weights(&mut r, n, m);
        let theta0 = find_stabilizer(&sys);
        prop_assume!(theta0.is_ok());
        let theta0 = theta0.unwrap();
        let sol = newton_kleinman(&sys, &w, &theta0, &NkOptions::default());
        // Kleinman updates stay mean-square stable but may leave the F(Θ) ≺ 0 region.
        prop_assume!(!matches!(sol, Err(Error::LostStability { .. })));
        let sol = sol.unwrap();
        let cert = check_h3(&sys, &w, &sol.p, None, None, &PinvPolicy::default());
        prop_assert!(cert.is_ok(), "{:?}", cert.err());
        let cert = cert.unwrap();
        let best = ergodic_cost(&sys, &w, &Strategy::new(cert.theta_bar.clone(), cert.v_bar.clone())).unwrap();
        prop_assert!((best - cert.value).abs() <= 1e-8 * (1.0 + best.abs()));
        for st in admissible_around(&mut r, &sys, &cert.theta_bar, &cert.v_bar, 100) {
            let e = ergodic_cost(&sys, &w, &st).unwrap();
            prop_assert!(best <= e + 1e-8 * (1.0 + e.abs()), "{best} > {e}");
        }
    }

    #[test]
    fn h2_lower_bound_is_sound(seed in any::<u64>(), (n, m, d) in dims()) {
        let mut r = rng(seed);
        let sys = random_system(&mut r, n, m, d);
        let w = definite_weights(&mut r, n, m);
        let theta0 = find_stabilizer(&sys);
        prop_assume!(theta0.is_ok());
        let theta0 = theta0.unwrap();
        let sol = newton_kleinman(&sys, &w, &theta0, &NkOptions::default());
        // Kleinman updates stay mean-square stable but may leave the F(Θ) ≺ 0 region.
        prop_assume!(!matches!(sol, Err(Error::LostStability { .. })));
        let sol = sol.unwrap();
        let cert = check_h2(&sys, &w, &sol.p, None, None, &PinvPolicy::default());
        prop_assert!(cert.is_ok(), "{:?}", cert.err());
        let bound = cert.unwrap().lower_bound;
        for st in admissible_around(&mut r, &sys, &sol.theta, &DVector::zeros(m), 100) {
            let e = ergodic_cost(&sys, &w, &st).unwrap();
            prop_assert!(e >= bound - 1e-8 * (1.0 + bound.abs()), "{e} < {bound}");
        }
    }

    #[test]
    fn h2_lower_bound_drift_only_family(
        a in -2.0..2.0f64, c in -2.0..2.0f64, b in -2.0..2.0f64, s in -2.0..2.0f64, margin in 0.1..3.0f64, seed in any::<u64>(),
    ) {
        let q = s * (2.0 * a + c * c) + margin;
        let sigma = if (q - 2.0 * a * s).abs() > 1e-3 { -c * s * b / (q - 2.0 * a * s) } else { 0.0 };
        let (sys, w) = drift_only(a, c, b, sigma, q, s);
        let cert = check_h2(&sys, &w, &m1x1(-s), None, None, &PinvPolicy::default());
        prop_assume!(cert.is_ok());
        let bound = cert.unwrap().lower_bound;
        let mut r = rng(seed);
        let edge = -(2.0 * a + c * c) / 2.0;
        for _ in 0..50 {
            let theta = edge - 10f64.powf(r.random_range(-2.0..2.0));
            let v = r.random_range(-20.0..20.0);
            let e = ergodic_cost(&sys, &w, &Strategy::scalar(theta, v)).unwrap();
            prop_assert!(e >= bound - 1e-6 * (1.0 + bound.abs()), "{e} < {bound}");
        }
    }
}

proptest! {
    #![proptest_config(cfg(16))]

    #[test]
    fn regularized_values_are_monotone(seed in any::<u64>(), (n, m, d) in dims()) {
        let mut r = rng(seed);
        let sys = random_system(&mut r, n, m, d);
        let w = definite_weights(&mut r, n, m);
        let tr = regularization_trace(&sys, &w, &geometric_schedule(1.0, 0.25, 8), 1e-3).unwrap();
        for pair in tr.entries.windows(2) {
            prop_assert!(pair[1].value <= pair[0].value + 1e-10 * (1.0 + pair[0].value.abs()));
        }
    }

    #[test]
    fn regularized_values_are_monotone_drift_only(
        a in -2.0..2.0f64, c in -2.0..2.0f64, b in -2.0..2.0f64, sigma in -2.0..2.0f64, s in -2.0..2.0f64, margin in 0.1..3.0f64,
    ) {
        let q = s * (2.0 * a + c * c) + margin;
        let (sys, w) = drift_only(a, c, b, sigma, q, s);
        let tr = regularization_trace(&sys, &w, &geometric_schedule(1e-1, 0.25, 8), 1e-3).unwrap();
        prop_assert_eq!(tr.entries.len(), 8);
        for pair in tr.entries.windows(2) {
            prop_assert!(pair[1].value <= pair[0].value + 1e-10 * (1.0 + pair[0].value.abs()));
        }
        let p = DriftOnly { a, c, b, sigma, q, s };
        let limit = h_inf_drift_only(&p).unwrap();
        prop_assert!(tr.entries.iter().all(|e| e.value >= limit - 1e-6 * (1.0 + limit.abs())));
    }

    #[test]
    fn classify_strategy_is_optimal(seed in any::<u64>(), (n, m, d) in dims()) {
        let mut r = rng(seed);
        let sys = random_system(&mut r, n, m, d);
        let w = definite_weights(&mut r, n, m);
        let report = classify(&sys, &w, &ClassifyOptions::default());
        let Verdict::SolvableWithStrategy { strategy, value, .. } = report.verdict else {
            prop_assume!(false);
            unreachable!()
        };
        let best = ergodic_cost(&sys, &w, &strategy).unwrap();
        prop_assert!((best - value).abs() <= 1e-8 * (1.0 + best.abs()));
        for st in admissible_around(&mut r, &sys, &strategy.theta, &strategy.v, 200) {
            let e = ergodic_cost(&sys, &w, &st).unwrap();
            prop_assert!(best <= e + 1e-8, "{best} > {e}");
        }
    }
}

proptest! {
    #![proptest_config(cfg(128))]

    #[test]
    fn scalar_admissibility_equivalence(
        a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64, d in prop_oneof![-3.0..-0.2f64, 0.2..3.0f64],
    ) {
        let p = ControlNoise::new(a, b, c, d, 0.0, 0.0, 0.0);
        let (alpha, _, _) = abg_control_noise(&p).unwrap();
        let sys = LinearSystem::scalar(a, b, c, d, 0.0, 0.0);
        for k in 0..=200 {
            let theta = -20.0 + 0.2 * k as f64;
            let lhs = (d * d * theta + b + c * d).abs();
            let rhs = alpha.max(0.0).sqrt() * d.abs();
            if (lhs - rhs).abs() < 1e-6 * (1.0 + lhs) {
                continue;
            }
            prop_assert_eq!(is_stabilizer(&sys, &m1x1(theta)), alpha > 0.0 && lhs < rhs, "theta {}", theta);
        }
    }

    #[test]
    fn h_is_constant_when_s2_vanishes(
        a in -2.0..2.0f64, c in -2.0..2.0f64, b in -2.0..2.0f64, s in -2.0..2.0f64, margin in 0.1..3.0f64,
    ) {
        let q = s * (2.0 * a + c * c) + margin;
        prop_assume!((q - 2.0 * a * s).abs() > 0.05);
        let sigma = -c * s * b / (q - 2.0 * a * s);
        let p = DriftOnly { a, c, b, sigma, q, s };
        let limit = h_inf_drift_only(&p).unwrap();
        let edge = -(2.0 * a + c * c) / 2.0;
        for k in 0..40 {
            let theta = edge - 0.05 * 1.25f64.powi(k);
            let h = h_drift_only(&p, &theta).unwrap();
            prop_assert!((h - limit).abs() <= 1e-10 * (1.0 + limit.abs()), "h({theta}) = {h} vs {limit}");
        }
    }

    #[test]
    fn drift_only_oracle_matches_pipeline(
        a in -2.0..2.0f64, c in -2.0..2.0f64, b in -2.0..2.0f64, sigma in -2.0..2.0f64, s in -2.0..2.0f64,
        q in -3.0..3.0f64, slack in 0.05..5.0f64, v in -5.0..5.0f64,
    ) {
        let p = DriftOnly { a, c, b, sigma, q, s };
        let (sys, w) = drift_only(a, c, b, sigma, q, s);
        let theta = -(2.0 * a + c * c) / 2.0 - slack;
        let exact = cost_drift_only(&p, &theta, &v).unwrap();
        let e = ergodic_cost(&sys, &w, &Strategy::scalar(theta, v)).unwrap();
        prop_assert!((e - exact).abs() <= 1e-8 * exact.abs().max(1.0), "{e} vs {exact}");
    }

    #[test]
    fn drift_only_regularized_matches_pipeline(
        a in -2.0..2.0f64, c in -2.0..2.0f64, b in -2.0..2.0f64, sigma in -2.0..2.0f64, s in -2.0..2.0f64,
        margin in 0.1..3.0f64, k in 1i32..7,
    ) {
        let q = s * (2.0 * a + c * c) + margin;
        let p = DriftOnly { a, c, b, sigma, q, s };
        let (sys, w) = drift_only(a, c, b, sigma, q, s);
        let delta = 10f64.powi(-k);
        let cf = regularized_closed_form_drift_only(&p, delta).unwrap();
        let sol = solve_regularized(&sys, &w, delta).unwrap();
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1.0);
        prop_assert!(rel(sol.p_hat[(0, 0)], cf.p) <= 1e-8);
        prop_assert!(rel(sol.theta_hat[(0, 0)], cf.theta) <= 1e-8);
        prop_assert!(rel(sol.eta_hat[0], cf.eta) <= 1e-8);
        prop_assert!(rel(sol.v_hat[0], cf.v) <= 1e-8);
        prop_assert!(rel(sol.value, cf.value) <= 1e-8, "{} vs {}", sol.value, cf.value);
    }
}

#[test]
fn m_theta_pi_is_symmetric() {
    let mut r = rng(5);
    let sys = wild_system(&mut r, 3, 2, 2);
    let w: CostWeights<f64> = indefinite_weights(&mut r, 3, 2);
    let m = m_theta_pi(&sys, &w, &normal_matrix(&mut r, 2, 3, 1.0), &symmetric(&mut r, 3, 1.0));
    assert!((&m - m.transpose()).norm() <= 1e-12 * (1.0 + m.norm()));
}
