//! Euler–Maruyama Monte-Carlo estimators of the ergodic cost.
//!
//! Each path draws from its own ChaCha8 stream selected by
//! `(seed, path_index)`, and per-path results are aggregated in path order,
//! so estimates are bit-identical for any number of worker threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::linalg::fro;
use crate::model::{is_stabilizer, ClosedLoop, CostWeights, LinearSystem, Strategy};
use crate::stationary::closed_loop_cost;
use crate::{Error, Real, Result};

const BLOWUP_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub burn_in: f64,
    pub seed: u64,
    pub abel_lambda: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 1e-3, horizon: 2000.0, n_paths: 64, burn_in: 100.0, seed: 0, abel_lambda: 1e-3 }
    }
}

impl SimConfig {
    /// Checks the configuration against a closed-loop drift matrix:
    /// `dt ≤ 1e-2·min(1, 1/‖A_cl‖_F)` and `0 ≤ burn_in < horizon`.
    pub fn validate<T: Real>(&self, a_cl: &DMatrix<T>) -> Result<()> {
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || self.n_paths == 0 || !(self.abel_lambda > 0.0) {
            return Err(Error::InvalidArgument("dt, horizon, n_paths and abel_lambda must be positive".into()));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.horizon) {
            return Err(Error::InvalidArgument("burn_in must lie in [0, horizon)".into()));
        }
        let norm = fro(a_cl).as_f64();
        let limit = 1e-2 * if norm > 1.0 { 1.0 / norm } else { 1.0 };
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("dt = {} exceeds the step bound {limit:e}", self.dt)));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn burn_steps(&self) -> usize {
        (self.burn_in / self.dt).round() as usize
    }
}

/// Cross-path summary of the estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStats<T: Real> {
    pub cesaro_mean: T,
    pub cesaro_stderr: T,
    pub abel_mean: T,
    pub abel_stderr: T,
    pub emp_m1: DVector<T>,
    pub emp_m2: DMatrix<T>,
    pub m1_stderr: DVector<T>,
    pub m2_stderr: DMatrix<T>,
    pub n_paths: usize,
}

/// Closed-loop coefficients flattened row-major for the inner loop.
struct FlatLoop<T> {
    n: usize,
    a: Vec<T>,
    c: Vec<Vec<T>>,
    drift: Vec<T>,
    diff: Vec<Vec<T>>,
}

impl<T: Real> FlatLoop<T> {
    fn new(cl: &ClosedLoop<T>) -> Self {
        let flat = |m: &DMatrix<T>| m.transpose().as_slice().to_vec();
        Self {
            n: cl.a_cl.nrows(),
            a: flat(&cl.a_cl),
            c: cl.c_cl.iter().map(flat).collect(),
            drift: cl.drift_const.as_slice().to_vec(),
            diff: cl.diff_const.iter().map(|s| s.as_slice().to_vec()).collect(),
        }
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Integrates one Euler–Maruyama path, calling `visit(step, x)` at every
/// grid point `t = step·dt`, `step = 0..=steps`.
fn run_path<T: Real>(
    fl: &FlatLoop<T>,
    x0: &[T],
    dt: f64,
    steps: usize,
    rng: &mut ChaCha8Rng,
    mut visit: impl FnMut(usize, &[T]),
) -> Result<()> {
    let n = fl.n;
    let mut x = x0.to_vec();
    let mut next = vec![T::zero(); n];
    let dt_t = T::lit(dt);
    let sq = T::lit(dt.sqrt());
    let limit = T::lit(BLOWUP_NORM * BLOWUP_NORM);
    visit(0, &x);
    for step in 1..=steps {
        for i in 0..n {
            let row = &fl.a[i * n..(i + 1) * n];
            let mut acc = fl.drift[i];
            for j in 0..n {
                acc += row[j] * x[j];
            }
            next[i] = x[i] + acc * dt_t;
        }
        for (c, s) in fl.c.iter().zip(&fl.diff) {
            let xi: f64 = rng.sample(StandardNormal);
            let dw = T::lit(xi) * sq;
            for i in 0..n {
                let row = &c[i * n..(i + 1) * n];
                let mut acc = s[i];
                for j in 0..n {
                    acc += row[j] * x[j];
                }
                next[i] += acc * dw;
            }
        }
        std::mem::swap(&mut x, &mut next);
        let mut norm2 = T::zero();
        for v in &x {
            norm2 += *v * *v;
        }
        if !(norm2 <= limit) {
            return Err(Error::NumericalBlowup { t: step as f64 * dt });
        }
        visit(step, &x);
    }
    Ok(())
}

fn prepare<T: Real>(
    sys: &LinearSystem<T>,
    strat: &Strategy<T>,
    x0: &DVector<T>,
    cfg: &SimConfig,
) -> Result<ClosedLoop<T>> {
    strat.check(sys)?;
    if x0.len() != sys.n() {
        return Err(Error::Dimension(format!("x0 has length {}, expected {}", x0.len(), sys.n())));
    }
    if !is_stabilizer(sys, &strat.theta) {
        return Err(Error::NotStabilizing);
    }
    let cl = ClosedLoop::new(sys, strat)?;
    cfg.validate(&cl.a_cl)?;
    Ok(cl)
}

/// Streams the states of path `path_index` of the closed-loop SDE:
/// `visit(t, x)` at every grid time `t ∈ {0, dt, …, horizon}`.
pub fn simulate_closed_loop<T: Real>(
    sys: &LinearSystem<T>,
    strat: &Strategy<T>,
    x0: &DVector<T>,
    cfg: &SimConfig,
    path_index: usize,
    mut visit: impl FnMut(f64, &[T]),
) -> Result<()> {
    let cl = prepare(sys, strat, x0, cfg)?;
    let fl = FlatLoop::new(&cl);
    let mut rng = path_rng(cfg.seed, path_index);
    let dt = cfg.dt;
    run_path(&fl, x0.as_slice(), dt, cfg.steps(), &mut rng, |k, x| visit(k as f64 * dt, x))
}

struct PathResult {
    cesaro: f64,
    abel: f64,
    m1: Vec<f64>,
    m2: Vec<f64>,
}

fn mean_stderr(values: impl Iterator<Item = f64> + Clone, count: usize) -> (f64, f64) {
    let n = count as f64;
    let mean = values.clone().sum::<f64>() / n;
    if count < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Cesàro and Abel cost estimators plus empirical stationary moments from
/// one batch of paths.
///
/// The Cesàro mean averages `g(X, ΘX+v)` over `[burn_in, horizon]`; the Abel
/// mean is `λ∫₀^T e^{−λt} g dt` over the whole path. Moments are time
/// averages after burn-in.
pub fn path_statistics<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    strat: &Strategy<T>,
    x0: &DVector<T>,
    cfg: &SimConfig,
) -> Result<PathStats<T>> {
    let cl = prepare(sys, strat, x0, cfg)?;
    let fl = FlatLoop::new(&cl);
    let n = sys.n();
    let (qg, cg, kg) = closed_loop_cost(w, strat);
    let qg: Vec<f64> = qg.transpose().as_slice().iter().map(|v| v.as_f64()).collect();
    let cg: Vec<f64> = cg.iter().map(|v| v.as_f64()).collect();
    let kg = kg.as_f64();
    let steps = cfg.steps();
    let burn = cfg.burn_steps();
    let dt = cfg.dt;
    let lambda = cfg.abel_lambda;
    let decay = (-lambda * dt).exp();

    let results: Vec<Result<PathResult>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p);
            let mut xf = vec![0.0; n];
            let mut ces = 0.0;
            let mut abel = 0.0;
            let mut disc = 1.0;
            let mut m1 = vec![0.0; n];
            let mut m2 = vec![0.0; n * n];
            let mut samples = 0usize;
            run_path(&fl, x0.as_slice(), dt, steps, &mut rng, |k, x| {
                if k == steps {
                    return;
                }
                for (f, v) in xf.iter_mut().zip(x) {
                    *f = v.as_f64();
                }
                let mut g = kg;
                for i in 0..n {
                    let mut row = 0.0;
                    for j in 0..n {
                        row += qg[i * n + j] * xf[j];
                    }
                    g += xf[i] * row + 2.0 * cg[i] * xf[i];
                }
                abel += disc * g;
                disc *= decay;
                if k >= burn {
                    ces += g;
                    samples += 1;
                    for i in 0..n {
                        m1[i] += xf[i];
                        for j in 0..n {
                            m2[i * n + j] += xf[i] * xf[j];
                        }
                    }
                }
            })?;
            let inv = 1.0 / samples.max(1) as f64;
            m1.iter_mut().for_each(|v| *v *= inv);
            m2.iter_mut().for_each(|v| *v *= inv);
            Ok(PathResult { cesaro: ces * inv, abel: lambda * dt * abel, m1, m2 })
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let count = results.len();
    let (cm, cs) = mean_stderr(results.iter().map(|r| r.cesaro), count);
    let (am, as_) = mean_stderr(results.iter().map(|r| r.abel), count);
    let mut m1 = DVector::zeros(n);
    let mut m1_se = DVector::zeros(n);
    let mut m2 = DMatrix::zeros(n, n);
    let mut m2_se = DMatrix::zeros(n, n);
    for i in 0..n {
        let (m, s) = mean_stderr(results.iter().map(|r| r.m1[i]), count);
        m1[i] = T::lit(m);
        m1_se[i] = T::lit(s);
        for j in 0..n {
            let (m, s) = mean_stderr(results.iter().map(|r| r.m2[i * n + j]), count);
            m2[(i, j)] = T::lit(m);
            m2_se[(i, j)] = T::lit(s);
        }
    }
    Ok(PathStats {
        cesaro_mean: T::lit(cm),
        cesaro_stderr: T::lit(cs),
        abel_mean: T::lit(am),
        abel_stderr: T::lit(as_),
        emp_m1: m1,
        emp_m2: m2,
        m1_stderr: m1_se,
        m2_stderr: m2_se,
        n_paths: count,
    })
}

/// Cesàro estimate of the ergodic cost.
pub fn cesaro_cost<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    strat: &Strategy<T>,
    x0: &DVector<T>,
    cfg: &SimConfig,
) -> Result<PathStats<T>> {
    path_statistics(sys, w, strat, x0, cfg)
}

/// Abel estimate `λ·J^λ`; requires `abel_lambda·horizon ≥ 20` so the
/// truncated tail weighs less than `e^{−20}`.
pub fn abel_cost<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    strat: &Strategy<T>,
    x0: &DVector<T>,
    cfg: &SimConfig,
) -> Result<T> {
    if cfg.abel_lambda * cfg.horizon < 20.0 {
        return Err(Error::InvalidArgument(format!(
            "abel_lambda * horizon = {} < 20",
            cfg.abel_lambda * cfg.horizon
        )));
    }
    Ok(path_statistics(sys, w, strat, x0, cfg)?.abel_mean)
}

/// Piecewise-constant control `v(t) = values[⌊t/piece⌋]`, zero afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseControl<T: Real> {
    pub piece: f64,
    pub values: Vec<DVector<T>>,
}

impl<T: Real> PiecewiseControl<T> {
    fn at(&self, step: usize, dt: f64) -> Option<&DVector<T>> {
        self.values.get((step as f64 * dt / self.piece).floor() as usize)
    }
}

/// `count` random controls with `pieces` standard-normal pieces scaled by
/// `scale`, reproducible from `seed`.
pub fn random_controls<T: Real>(
    m: usize,
    count: usize,
    pieces: usize,
    piece: f64,
    scale: f64,
    seed: u64,
) -> Vec<PiecewiseControl<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| PiecewiseControl {
            piece,
            values: (0..pieces)
                .map(|_| DVector::from_fn(m, |_, _| T::lit(scale * rng.sample::<f64, _>(StandardNormal))))
                .collect(),
        })
        .collect()
}

/// Homogeneous-cost estimates, one per control.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousCheck<T: Real> {
    /// `(mean, stderr)` of `∫₀^T g⁰(X, ΘX + v) dt` per control.
    pub estimates: Vec<(T, T)>,
    pub min_mean: T,
    /// Stderr of the minimizing estimate.
    pub min_stderr: T,
}

/// Falsification probe for uniform convexity of the stabilized homogeneous
/// problem: simulates `b = σ = 0` from `x = 0` under `u = ΘX + v(t)` and
/// reports the finite-horizon costs `∫₀^T ⟨QX,X⟩ + 2⟨SX,u⟩ + ⟨Ru,u⟩ dt`.
/// The truncation at `horizon` biases by `O(e^{−λ(Θ)T})`.
pub fn homogeneous_cost_check<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    theta: &DMatrix<T>,
    controls: &[PiecewiseControl<T>],
    cfg: &SimConfig,
) -> Result<HomogeneousCheck<T>> {
    let hom = sys.homogeneous();
    let (n, m) = (sys.n(), sys.m());
    let strat = Strategy::new(theta.clone(), DVector::zeros(m));
    let cl = prepare(&hom, &strat, &DVector::zeros(n), cfg)?;
    if controls.iter().any(|c| c.values.iter().any(|v| v.len() != m) || !(c.piece > 0.0)) {
        return Err(Error::Dimension("control values must have length m and positive piece length".into()));
    }
    let dt = cfg.dt;
    let steps = cfg.steps();
    let f64m = |a: &DMatrix<T>| -> Vec<f64> { a.transpose().as_slice().iter().map(|v| v.as_f64()).collect() };
    let (a, b, q, s, r) = (f64m(&cl.a_cl), f64m(&sys.b), f64m(&w.q), f64m(&w.s), f64m(&w.r));
    let th = f64m(theta);
    let cs: Vec<Vec<f64>> = cl.c_cl.iter().map(|c| f64m(c)).collect();
    let ds: Vec<Vec<f64>> = sys.d.iter().map(|d| f64m(d)).collect();
    let sq = dt.sqrt();
    let limit = BLOWUP_NORM * BLOWUP_NORM;

    let mut estimates = Vec::with_capacity(controls.len());
    for (ci, ctrl) in controls.iter().enumerate() {
        let vals: Vec<Vec<f64>> = ctrl.values.iter().map(|v| v.iter().map(|x| x.as_f64()).collect()).collect();
        let costs: Vec<Result<f64>> = (0..cfg.n_paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = path_rng(cfg.seed ^ (ci as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), p);
                let mut x = vec![0.0; n];
                let mut next = vec![0.0; n];
                let mut u = vec![0.0; m];
                let zero = vec![0.0; m];
                let mut total = 0.0;
                for step in 0..steps {
                    let v = ctrl.at(step, dt).map(|_| &vals[(step as f64 * dt / ctrl.piece).floor() as usize]).unwrap_or(&zero);
                    for i in 0..m {
                        let mut acc = v[i];
                        for j in 0..n {
                            acc += th[i * n + j] * x[j];
                        }
                        u[i] = acc;
                    }
                    let mut g = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            g += x[i] * q[i * n + j] * x[j];
                        }
                    }
                    for i in 0..m {
                        for j in 0..n {
                            g += 2.0 * u[i] * s[i * n + j] * x[j];
                        }
                        for j in 0..m {
                            g += u[i] * r[i * m + j] * u[j];
                        }
                    }
                    total += g * dt;
                    // X' = X + (A_cl X + B v)dt + Σ (C_cl X + D v) dW
                    for i in 0..n {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += a[i * n + j] * x[j];
                        }
                        for j in 0..m {
                            acc += b[i * m + j] * v[j];
                        }
                        next[i] = x[i] + acc * dt;
                    }
                    for (c, d) in cs.iter().zip(&ds) {
                        let dw: f64 = rng.sample::<f64, _>(StandardNormal) * sq;
                        for i in 0..n {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += c[i * n + j] * x[j];
                            }
                            for j in 0..m {
                                acc += d[i * m + j] * v[j];
                            }
                            next[i] += acc * dw;
                        }
                    }
                    std::mem::swap(&mut x, &mut next);
                    if !(x.iter().map(|v| v * v).sum::<f64>() <= limit) {
                        return Err(Error::NumericalBlowup { t: (step + 1) as f64 * dt });
                    }
                }
                Ok(total)
            })
            .collect();
        let costs = costs.into_iter().collect::<Result<Vec<_>>>()?;
        let (mean, se) = mean_stderr(costs.iter().copied(), costs.len());
        estimates.push((T::lit(mean), T::lit(se)));
    }
    let (min_mean, min_stderr) = estimates
        .iter()
        .copied()
        .fold(None, |acc: Option<(T, T)>, e| match acc {
            Some(a) if a.0 <= e.0 => Some(a),
            _ => Some(e),
        })
        .unwrap_or((T::zero(), T::zero()));
    Ok(HomogeneousCheck { estimates, min_mean, min_stderr })
}
