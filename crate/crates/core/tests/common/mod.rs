#![allow(dead_code)]

use ergolq::model::{CostWeights, LinearSystem};
use ergolq::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let g = normal_matrix(rng, n, n, scale);
    (&g + g.transpose()) * 0.5
}

/// `GGᵀ + shift·I`.
pub fn psd(rng: &mut ChaCha8Rng, n: usize, rank: usize, shift: f64) -> DMatrix<f64> {
    let g = normal_matrix(rng, n, rank, 1.0);
    &g * g.transpose() + DMatrix::identity(n, n) * shift
}

/// System with `A` shifted to be comfortably stable and moderate noise.
pub fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize, d: usize) -> LinearSystem<f64> {
    let a = normal_matrix(rng, n, n, 0.5) - DMatrix::identity(n, n) * (1.0 + 0.5 * n as f64);
    LinearSystem::new(
        a,
        normal_matrix(rng, n, m, 1.0),
        (0..d).map(|_| normal_matrix(rng, n, n, 0.3)).collect(),
        (0..d).map(|_| normal_matrix(rng, n, m, 0.3)).collect(),
        normal_vector(rng, n, 1.0),
        (0..d).map(|_| normal_vector(rng, n, 1.0)).collect(),
    )
    .unwrap()
}

/// System with an unconstrained random `A`.
pub fn wild_system(rng: &mut ChaCha8Rng, n: usize, m: usize, d: usize) -> LinearSystem<f64> {
    LinearSystem::new(
        normal_matrix(rng, n, n, 1.0),
        normal_matrix(rng, n, m, 1.0),
        (0..d).map(|_| normal_matrix(rng, n, n, 0.5)).collect(),
        (0..d).map(|_| normal_matrix(rng, n, m, 0.5)).collect(),
        normal_vector(rng, n, 1.0),
        (0..d).map(|_| normal_vector(rng, n, 1.0)).collect(),
    )
    .unwrap()
}

pub fn indefinite_weights(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CostWeights<f64> {
    CostWeights::new(
        n,
        m,
        symmetric(rng, n, 1.0),
        normal_matrix(rng, m, n, 1.0),
        symmetric(rng, m, 1.0),
        normal_vector(rng, n, 1.0),
        normal_vector(rng, m, 1.0),
    )
    .unwrap()
}

/// `[[Q, Sᵀ], [S, R]] ≻ 0`.
pub fn definite_weights(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CostWeights<f64> {
    let big = psd(rng, n + m, n + m, 0.2);
    CostWeights::new(
        n,
        m,
        big.view((0, 0), (n, n)).into_owned(),
        big.view((n, 0), (m, n)).into_owned(),
        big.view((n, n), (m, m)).into_owned(),
        normal_vector(rng, n, 1.0),
        normal_vector(rng, m, 1.0),
    )
    .unwrap()
}

pub fn m1x1(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

pub fn drift_only(a: f64, c: f64, b: f64, sigma: f64, q: f64, s: f64) -> (LinearSystem<f64>, CostWeights<f64>) {
    (LinearSystem::scalar(a, 1.0, c, 0.0, b, sigma), CostWeights::scalar(q, s, 0.0, 0.0, 0.0))
}
