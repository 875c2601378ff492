//! Complete solvers for the ergodic control problem: the positive-definite
//! path, the Riccati-certificate path and `δ`-regularization.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{fro, min_sym_eig, solve_vec};
use crate::model::{find_stabilizer, is_stabilizer, lambda_of_theta, CostWeights, LinearSystem, Strategy};
use crate::riccati::{
    are_residual, check_h2, check_h3, newton_kleinman, pi_candidates, r_of_pi, AreSolution, CertificateFailure,
    CertificateH2, CertificateH3, NkOptions, PinvPolicy,
};
use crate::stationary::{ergodic_cost, eta_solve};
use crate::{Error, Real, Result};

/// Affine part of the strategy induced by a Riccati solution `P` and its
/// feedback `Θ`: `(η, v, value)` with
/// `v = −(R+ΣDᵀPD)⁻¹(Bᵀη + ΣDᵀPσ + ρ)` and
/// `value = Σ⟨Pσ,σ⟩ + 2⟨η,b⟩ − ⟨(R+ΣDᵀPD)v,v⟩`.
fn affine_part<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    theta: &DMatrix<T>,
    p: &DMatrix<T>,
) -> Result<(DVector<T>, DVector<T>, T)> {
    let eta = eta_solve(sys, w, theta, p)?;
    let mut r = sys.b.transpose() * &eta + &w.rho;
    let mut sig = T::zero();
    for (d, s) in sys.d.iter().zip(&sys.sigma) {
        let ps = p * s;
        r += d.transpose() * &ps;
        sig += s.dot(&ps);
    }
    let rp = r_of_pi(sys, w, p);
    let v = -solve_vec(&rp, &r, "R + D'PD")?;
    let value = sig + T::lit(2.0) * eta.dot(&sys.drift) - (v.transpose() * &rp * &v)[0];
    Ok((eta, v, value))
}

/// Optimal strategy and value when `[[Q, Sᵀ], [S, R]] ≻ 0`.
pub fn solve_positive_definite<T: Real>(sys: &LinearSystem<T>, w: &CostWeights<T>) -> Result<(Strategy<T>, T)> {
    let min_eig = min_sym_eig(&w.block());
    if !(min_eig > T::zero()) {
        return Err(Error::NotPositiveDefinite { min_eig: min_eig.as_f64() });
    }
    let theta0 = find_stabilizer(sys)?;
    let sol = newton_kleinman(sys, w, &theta0, &NkOptions::default())?;
    let (_, v, value) = affine_part(sys, w, &sol.theta, &sol.p)?;
    Ok((Strategy::new(sol.theta, v), value))
}

/// Solution of the problem with `R` replaced by `R + δI`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedSolution<T: Real> {
    pub delta: T,
    pub p_hat: DMatrix<T>,
    pub theta_hat: DMatrix<T>,
    pub eta_hat: DVector<T>,
    pub v_hat: DVector<T>,
    pub value: T,
    /// `‖ARE_δ(P̂_δ)‖_F`.
    pub are_residual: T,
    pub nk_iterations: usize,
    pub residual_trace: Vec<T>,
}

impl<T: Real> RegularizedSolution<T> {
    pub fn strategy(&self) -> Strategy<T> {
        Strategy::new(self.theta_hat.clone(), self.v_hat.clone())
    }
}

/// Solves the regularized problem from a stabilizer found by search.
pub fn solve_regularized<T: Real>(sys: &LinearSystem<T>, w: &CostWeights<T>, delta: T) -> Result<RegularizedSolution<T>> {
    let theta0 = find_stabilizer(sys)?;
    solve_regularized_from(sys, w, delta, &theta0)
}

/// Solves the regularized problem with Newton–Kleinman started at `theta0`.
pub fn solve_regularized_from<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    delta: T,
    theta0: &DMatrix<T>,
) -> Result<RegularizedSolution<T>> {
    if !(delta > T::zero()) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let wd = w.regularized(delta);
    let sol: AreSolution<T> = newton_kleinman(sys, &wd, theta0, &NkOptions::default())?;
    let (eta, v, value) = affine_part(sys, &wd, &sol.theta, &sol.p)?;
    Ok(RegularizedSolution {
        delta,
        are_residual: sol.residual,
        nk_iterations: sol.iterations,
        residual_trace: sol.residual_trace,
        p_hat: sol.p,
        theta_hat: sol.theta,
        eta_hat: eta,
        v_hat: v,
        value,
    })
}

/// `δ_j = δ₀·ratio^j`, `j = 0..len`.
pub fn geometric_schedule(delta0: f64, ratio: f64, len: usize) -> Vec<f64> {
    (0..len).map(|j| delta0 * ratio.powi(j as i32)).collect()
}

/// `1e-2·(1/4)^j` for `j = 0..12`.
pub fn default_schedule() -> Vec<f64> {
    geometric_schedule(1e-2, 0.25, 12)
}

pub const DEFAULT_CONV_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum TraceStatus {
    Converged,
    NotConverged,
    /// Values keep decreasing with non-shrinking increments.
    Diverging,
    /// A regularized solve failed at the given `δ`.
    Failed { delta: f64, error: Error },
}

/// Regularized solutions along a decreasing `δ` schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationTrace<T: Real> {
    pub entries: Vec<RegularizedSolution<T>>,
    /// Value at the smallest `δ`.
    pub limit_estimate: T,
    /// Least-squares fit `value ≈ 𝓔 + c√δ` over the last three entries.
    pub extrapolated: Option<T>,
    pub converged: bool,
    /// `(Θ̂_δ, v̂_δ)` settled over the last two steps.
    pub strategy_converged: bool,
    /// `|𝓔_{δ_j} − 𝓔_{δ_{j+1}}|` per consecutive pair.
    pub diagnostics: Vec<T>,
    pub status: TraceStatus,
}

fn validate_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("empty delta schedule".into()));
    }
    if schedule.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::InvalidArgument("delta schedule must be positive".into()));
    }
    if schedule.windows(2).any(|p| !(p[1] < p[0])) {
        return Err(Error::InvalidArgument("delta schedule must be strictly decreasing".into()));
    }
    Ok(())
}

fn richardson<T: Real>(entries: &[RegularizedSolution<T>]) -> Option<T> {
    if entries.len() < 3 {
        return None;
    }
    let last = &entries[entries.len() - 3..];
    // normal equations of value = e + c·√δ
    let (mut s1, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for e in last {
        let x = e.delta.as_f64().sqrt();
        let y = e.value.as_f64();
        s1 += 1.0;
        sx += x;
        sxx += x * x;
        sy += y;
        sxy += x * y;
    }
    let det = s1 * sxx - sx * sx;
    if det.abs() <= f64::EPSILON * sxx.max(1e-300) {
        return None;
    }
    let e = (sxx * sy - sx * sxy) / det;
    e.is_finite().then(|| T::lit(e))
}

fn strategy_settled<T: Real>(entries: &[RegularizedSolution<T>]) -> bool {
    if entries.len() < 3 {
        return false;
    }
    let tol = T::lit(1e-4);
    entries.windows(2).rev().take(2).all(|p| {
        let dt = fro(&(&p[1].theta_hat - &p[0].theta_hat));
        let dv = (&p[1].v_hat - &p[0].v_hat).norm();
        let scale = T::one() + fro(&p[1].theta_hat) + p[1].v_hat.norm();
        dt + dv <= tol * scale
    })
}

/// Runs the regularized solves along `schedule` and always returns the
/// trace; the outcome is recorded in [`RegularizationTrace::status`].
///
/// Each solve is warm-started from the previous feedback.
pub fn regularization_trace<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    schedule: &[f64],
    conv_tol: f64,
) -> Result<RegularizationTrace<T>> {
    validate_schedule(schedule)?;
    let mut entries: Vec<RegularizedSolution<T>> = Vec::with_capacity(schedule.len());
    let mut status = None;
    let mut start = match find_stabilizer(sys) {
        Ok(t) => t,
        Err(e) => {
            status = Some(TraceStatus::Failed { delta: schedule[0], error: e });
            DMatrix::zeros(sys.m(), sys.n())
        }
    };
    if status.is_none() {
        for &delta in schedule {
            let d = T::lit(delta);
            let sol = solve_regularized_from(sys, w, d, &start).or_else(|e| match find_stabilizer(sys) {
                Ok(t) if t != start => solve_regularized_from(sys, w, d, &t),
                _ => Err(e),
            });
            match sol {
                Ok(sol) => {
                    start = sol.theta_hat.clone();
                    entries.push(sol);
                }
                Err(error) => {
                    status = Some(TraceStatus::Failed { delta, error });
                    break;
                }
            }
        }
    }
    let diagnostics: Vec<T> = entries.windows(2).map(|p| (p[1].value - p[0].value).abs()).collect();
    let limit_estimate = entries.last().map_or_else(T::zero, |e| e.value);
    let tol = T::lit(conv_tol);
    let converged = entries.len() >= 3
        && entries.windows(2).rev().take(2).all(|p| (p[1].value - p[0].value).abs() <= tol * (T::one() + p[1].value.abs()));
    let diverging = !converged && entries.len() >= 3 && {
        let k = entries.len();
        let d1 = entries[k - 2].value - entries[k - 3].value;
        let d2 = entries[k - 1].value - entries[k - 2].value;
        d1 < T::zero() && d2 < T::zero() && d2.abs() >= d1.abs()
    };
    let status = status.unwrap_or(if converged {
        TraceStatus::Converged
    } else if diverging {
        TraceStatus::Diverging
    } else {
        TraceStatus::NotConverged
    });
    Ok(RegularizationTrace {
        extrapolated: richardson(&entries),
        strategy_converged: strategy_settled(&entries),
        converged: status == TraceStatus::Converged,
        limit_estimate,
        diagnostics,
        entries,
        status,
    })
}

/// Approximates the optimal value as `lim_{δ→0⁺} 𝓔_δ`.
///
/// Fails with `Diverging` when the regularized values decrease without
/// settling, and propagates the error of a failed regularized solve.
pub fn value_by_regularization<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    schedule: &[f64],
    conv_tol: f64,
) -> Result<RegularizationTrace<T>> {
    let trace = regularization_trace(sys, w, schedule, conv_tol)?;
    match &trace.status {
        TraceStatus::Diverging => {
            let last = trace.entries.last().expect("diverging trace has entries");
            Err(Error::Diverging { last_value: last.value.as_f64(), last_delta: last.delta.as_f64() })
        }
        TraceStatus::Failed { error, .. } => Err(error.clone()),
        _ => Ok(trace),
    }
}

/// Options of [`classify`].
#[derive(Debug, Clone)]
pub struct ClassifyOptions<T: Real> {
    /// User-supplied `Π₀`; otherwise a candidate scan is used.
    pub pi0: Option<DMatrix<T>>,
    pub lambda: Option<DMatrix<T>>,
    pub schedule: Vec<f64>,
    pub conv_tol: f64,
    pub policy: PinvPolicy,
}

impl<T: Real> Default for ClassifyOptions<T> {
    fn default() -> Self {
        Self { pi0: None, lambda: None, schedule: default_schedule(), conv_tol: DEFAULT_CONV_TOL, policy: PinvPolicy::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveRoute {
    /// Positive-definite weights.
    PositiveDefinite,
    /// Stabilizing Riccati root from Newton–Kleinman.
    RiccatiRoot,
    /// Riccati-equation certificate at a supplied or scanned `Π₀`.
    RiccatiCertificate,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict<T: Real> {
    SolvableWithStrategy { strategy: Strategy<T>, value: T, route: SolveRoute },
    FiniteWithValue { value: T, lower_bound: T },
    RegularizationDiverged { last_value: T, last_delta: T },
    Inconclusive { reason: String },
}

/// Everything [`classify`] found out.
#[derive(Debug, Clone)]
pub struct Report<T: Real> {
    pub verdict: Verdict<T>,
    pub stabilizer: Option<DMatrix<T>>,
    /// `λ(Θ)` of the found stabilizer.
    pub stability_margin: Option<T>,
    pub positive_definite: bool,
    pub are: Option<AreSolution<T>>,
    pub h3: Option<CertificateH3<T>>,
    pub h2: Option<CertificateH2<T>>,
    /// Last failure of each certificate attempt.
    pub h3_failure: Option<CertificateFailure>,
    pub h2_failure: Option<CertificateFailure>,
    pub trace: Option<RegularizationTrace<T>>,
    pub notes: Vec<String>,
}

fn candidates<T: Real>(sys: &LinearSystem<T>, w: &CostWeights<T>, opts: &ClassifyOptions<T>) -> Vec<DMatrix<T>> {
    match &opts.pi0 {
        Some(p) => vec![p.clone()],
        None => pi_candidates(sys, w, &opts.policy),
    }
}

/// Runs the available solvers in order of strength and reports the first
/// conclusive outcome. Never fails: every failure mode is a verdict.
pub fn classify<T: Real>(sys: &LinearSystem<T>, w: &CostWeights<T>, opts: &ClassifyOptions<T>) -> Report<T> {
    let mut report = Report {
        verdict: Verdict::Inconclusive { reason: String::new() },
        stabilizer: None,
        stability_margin: None,
        positive_definite: min_sym_eig(&w.block()) > T::zero(),
        are: None,
        h3: None,
        h2: None,
        h3_failure: None,
        h2_failure: None,
        trace: None,
        notes: Vec::new(),
    };
    let stab = match find_stabilizer(sys) {
        Ok(t) => t,
        Err(e) => {
            report.verdict = Verdict::Inconclusive { reason: format!("stabilizer not found: {e}") };
            return report;
        }
    };
    report.stability_margin = lambda_of_theta(sys, &stab).ok();
    report.stabilizer = Some(stab.clone());

    if report.positive_definite {
        match solve_positive_definite(sys, w) {
            Ok((strategy, value)) => {
                report.verdict = Verdict::SolvableWithStrategy { strategy, value, route: SolveRoute::PositiveDefinite };
                return report;
            }
            Err(e) => report.notes.push(format!("positive-definite path failed: {e}")),
        }
    }

    match newton_kleinman(sys, w, &stab, &NkOptions::default()) {
        Ok(sol) => {
            match check_h3(sys, w, &sol.p, None, None, &opts.policy) {
                Ok(cert) => {
                    let strategy = Strategy::new(cert.theta_bar.clone(), cert.v_bar.clone());
                    report.verdict =
                        Verdict::SolvableWithStrategy { strategy, value: cert.value, route: SolveRoute::RiccatiRoot };
                    report.h3 = Some(cert);
                    report.are = Some(sol);
                    return report;
                }
                Err(f) => report.notes.push(format!("Riccati root does not certify solvability: {f}")),
            }
            report.are = Some(sol);
        }
        Err(e) => report.notes.push(format!("Newton-Kleinman on the unregularized problem: {e}")),
    }

    let pis = candidates(sys, w, opts);
    for pi in &pis {
        match check_h3(sys, w, pi, opts.lambda.as_ref(), None, &opts.policy) {
            Ok(cert) => {
                let strategy = Strategy::new(cert.theta_bar.clone(), cert.v_bar.clone());
                report.verdict =
                    Verdict::SolvableWithStrategy { strategy, value: cert.value, route: SolveRoute::RiccatiCertificate };
                report.h3 = Some(cert);
                return report;
            }
            Err(f) => report.h3_failure = Some(f),
        }
    }
    for pi in &pis {
        match check_h2(sys, w, pi, opts.lambda.as_ref(), None, &opts.policy) {
            Ok(cert) => {
                report.h2 = Some(cert);
                break;
            }
            Err(f) => report.h2_failure = Some(f),
        }
    }

    let trace = match regularization_trace(sys, w, &opts.schedule, opts.conv_tol) {
        Ok(t) => t,
        Err(e) => {
            report.verdict = Verdict::Inconclusive { reason: format!("regularization not run: {e}") };
            return report;
        }
    };
    report.verdict = match (&trace.status, &report.h2) {
        (TraceStatus::Diverging, _) => {
            let last = trace.entries.last().expect("diverging trace has entries");
            if report.h2.is_some() {
                report.notes.push("finiteness certificate holds but regularized values keep decreasing".into());
            }
            Verdict::RegularizationDiverged { last_value: last.value, last_delta: last.delta }
        }
        (TraceStatus::Converged, Some(h2)) => {
            Verdict::FiniteWithValue { value: trace.limit_estimate, lower_bound: h2.lower_bound }
        }
        (TraceStatus::Converged, None) => Verdict::Inconclusive {
            reason: format!(
                "regularized values settle near {} but no finiteness certificate was found",
                trace.limit_estimate
            ),
        },
        (TraceStatus::NotConverged, _) => Verdict::Inconclusive { reason: "regularized values did not settle".into() },
        (TraceStatus::Failed { delta, error }, _) => {
            Verdict::Inconclusive { reason: format!("regularized solve failed at delta = {delta}: {error}") }
        }
    };
    report.trace = Some(trace);
    report
}

/// Recomputes the value of a regularized solution from stationary moments
/// of the regularized problem.
pub fn regularized_value_by_moments<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    sol: &RegularizedSolution<T>,
) -> Result<T> {
    ergodic_cost(sys, &w.regularized(sol.delta), &sol.strategy())
}

/// ARE residual of a regularized solution, recomputed.
pub fn regularized_residual<T: Real>(sys: &LinearSystem<T>, w: &CostWeights<T>, sol: &RegularizedSolution<T>) -> Result<T> {
    Ok(fro(&are_residual(sys, &w.regularized(sol.delta), &sol.p_hat)?))
}

/// `true` if `strategy` is admissible.
pub fn admissible<T: Real>(sys: &LinearSystem<T>, strategy: &Strategy<T>) -> bool {
    is_stabilizer(sys, &strategy.theta)
}
