mod common;

use common::*;
use ergolq::model::{CostWeights, LinearSystem, Strategy};
use ergolq::simulate::{homogeneous_cost_check, path_statistics, random_controls, SimConfig};
use ergolq::stationary::{ergodic_cost, stationary_moments};
use ergolq::DVector;

fn cfg(seed: u64) -> SimConfig {
    SimConfig { dt: 1e-3, horizon: 1000.0, n_paths: 32, burn_in: 50.0, seed, abel_lambda: 2e-2 }
}

fn assert_oracle_agreement(sys: &LinearSystem<f64>, w: &CostWeights<f64>, st: &Strategy<f64>, seed: u64) {
    let exact = ergodic_cost(sys, w, st).unwrap();
    let mo = stationary_moments(sys, st).unwrap();
    let ps = path_statistics(sys, w, st, &DVector::zeros(sys.n()), &cfg(seed)).unwrap();
    let tol = (3.0 * ps.cesaro_stderr).max(0.02 * (1.0 + exact.abs()));
    assert!((ps.cesaro_mean - exact).abs() <= tol, "cost {} vs {exact} (tol {tol})", ps.cesaro_mean);
    for i in 0..sys.n() {
        let err = (ps.emp_m1[i] - mo.m1[i]).abs();
        assert!(err <= 3.0 * ps.m1_stderr[i] + 1e-3, "m1[{i}] {} vs {}", ps.emp_m1[i], mo.m1[i]);
        for j in 0..sys.n() {
            let err = (ps.emp_m2[(i, j)] - mo.m2[(i, j)]).abs();
            assert!(
                err <= 3.0 * ps.m2_stderr[(i, j)] + 1e-2 * (1.0 + mo.m2[(i, j)].abs()),
                "M2[{i},{j}] {} vs {}",
                ps.emp_m2[(i, j)],
                mo.m2[(i, j)]
            );
        }
    }
}

#[test]
fn ornstein_uhlenbeck_with_drift() {
    let sys = LinearSystem::scalar(-1.0, 1.0, 0.0, 0.0, 0.5, 1.0);
    let w = CostWeights::scalar(1.0, 0.0, 1.0, 0.0, 0.0);
    assert_oracle_agreement(&sys, &w, &Strategy::scalar(0.0, 0.0), 1);
}

#[test]
fn drift_only_moments() {
    let (sys, w) = drift_only(1.0, 1.0, 1.0, 1.0, -1.0, -1.0);
    assert_oracle_agreement(&sys, &w, &Strategy::scalar(-3.0, 0.0), 2);
}

#[test]
fn control_noise_with_noise() {
    let sys = LinearSystem::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
    let w = CostWeights::scalar(-1.0, -2.5, -1.0, 0.0, 0.0);
    assert_oracle_agreement(&sys, &w, &Strategy::scalar(-2.0, 0.3), 3);
}

#[test]
fn two_dimensional_system() {
    let mut r = rng(11);
    let sys = random_system(&mut r, 2, 1, 1);
    let w = definite_weights(&mut r, 2, 1);
    let theta = ergolq::model::find_stabilizer(&sys).unwrap();
    assert_oracle_agreement(&sys, &w, &Strategy::new(theta, DVector::from_element(1, 0.5)), 4);
}

#[test]
fn homogeneous_cost_nonnegative_for_definite_weights() {
    let sys = LinearSystem::scalar(-1.0, 1.0, 0.5, 0.2, 3.0, 2.0);
    let w = CostWeights::scalar(1.0, 0.2, 1.0, 5.0, 5.0);
    let controls = random_controls(1, 4, 5, 1.0, 1.0, 7);
    let cfg = SimConfig { dt: 1e-3, horizon: 20.0, n_paths: 16, burn_in: 0.0, seed: 5, abel_lambda: 1.0 };
    let check = homogeneous_cost_check(&sys, &w, &m1x1(-0.5), &controls, &cfg).unwrap();
    assert_eq!(check.estimates.len(), 4);
    assert!(check.min_mean > 0.0, "{check:?}");
}
