//! Riccati machinery: the `Π`-dependent matrices `L_Π`, `Q_{Θ,Π}`, `Q̂_Π`,
//! `M_{Θ,Π}`, the minimizing feedback set `Υ[Π]`, closed-loop Lyapunov
//! solves, Newton–Kleinman iteration and the finiteness/solvability
//! certificates.
//!
//! Every `†` is a truncated Moore–Penrose pseudo-inverse governed by a single
//! [`PinvPolicy`]; range inclusions `ℛ(Y) ⊆ ℛ(M)` are decided through the
//! projector defect `‖(I − MM†)Y‖ / (1 + ‖Y‖)`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, fro, max_sym_eig, min_sym_eig, solve_square, symmetrize};
use crate::model::{
    closed_loop_gains, f_of_theta, find_stabilizer_with, is_stabilizer, CostWeights, LinearSystem,
    StabilizerSearch,
};
use crate::stationary::{eta_rhs, eta_solve};
use crate::{Error, Real, Result};

/// Truncation policy for pseudo-inverses and range checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinvPolicy {
    pub rel_tol: f64,
}

impl Default for PinvPolicy {
    fn default() -> Self {
        Self { rel_tol: 1e-10 }
    }
}

impl PinvPolicy {
    pub fn new(rel_tol: f64) -> Result<Self> {
        if !(rel_tol > 0.0 && rel_tol <= 1e-4) {
            return Err(Error::InvalidArgument(format!("pinv rel_tol {rel_tol} outside (0, 1e-4]")));
        }
        Ok(Self { rel_tol })
    }

    fn range_tol(&self) -> f64 {
        self.rel_tol * 10.0
    }
}

/// Moore–Penrose pseudo-inverse under `policy`.
pub fn pinv<T: Real>(m: &DMatrix<T>, policy: &PinvPolicy) -> DMatrix<T> {
    linalg::pinv(m, T::lit(policy.rel_tol))
}

/// `L_Π = BᵀΠ + Σₖ DₖᵀΠCₖ + S`.
pub fn l_of_pi<T: Real>(sys: &LinearSystem<T>, w: &CostWeights<T>, pi: &DMatrix<T>) -> DMatrix<T> {
    let mut l = sys.b.transpose() * pi + &w.s;
    for (c, d) in sys.c.iter().zip(&sys.d) {
        l += d.transpose() * pi * c;
    }
    l
}

/// `R + Σₖ DₖᵀΠDₖ`.
pub fn r_of_pi<T: Real>(sys: &LinearSystem<T>, w: &CostWeights<T>, pi: &DMatrix<T>) -> DMatrix<T> {
    let mut r = w.r.clone();
    for d in &sys.d {
        r += d.transpose() * pi * d;
    }
    symmetrize(&r)
}

/// `R + ΣDᵀΠD` with eigenvalues below `rel_tol·(‖R‖ + Σ‖D‖²‖Π‖)` set to
/// zero, so that cancellation noise between the summands is not inverted.
fn r_of_pi_truncated<T: Real>(sys: &LinearSystem<T>, w: &CostWeights<T>, pi: &DMatrix<T>, policy: &PinvPolicy) -> DMatrix<T> {
    let scale = sys.d.iter().fold(fro(&w.r), |acc, d| acc + fro(d) * fro(d) * fro(pi));
    linalg::chop_small_eigenvalues(&r_of_pi(sys, w, pi), T::lit(policy.rel_tol) * scale)
}

/// `ΠA + AᵀΠ + Σₖ CₖᵀΠCₖ + Q`.
fn pi_lyap_q<T: Real>(sys: &LinearSystem<T>, w: &CostWeights<T>, pi: &DMatrix<T>) -> DMatrix<T> {
    linalg::adjoint_lyapunov_residual(&sys.a, &sys.c, &w.q, pi)
}

/// `Q_{Θ,Π} = ΠA_cl + A_clᵀΠ + Σₖ C_clᵀΠC_cl + SᵀΘ + ΘᵀS + ΘᵀRΘ + Q`.
pub fn q_theta_pi<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    theta: &DMatrix<T>,
    pi: &DMatrix<T>,
) -> DMatrix<T> {
    let (a_cl, c_cl) = closed_loop_gains(sys, theta);
    let rhs = &w.q + w.s.transpose() * theta + theta.transpose() * &w.s + theta.transpose() * &w.r * theta;
    symmetrize(&linalg::adjoint_lyapunov_residual(&a_cl, &c_cl, &rhs, pi))
}

/// Same matrix written as `ΠA + AᵀΠ + ΣCᵀΠC + L_ΠᵀΘ + ΘᵀL_Π + Θᵀ(R+ΣDᵀΠD)Θ + Q`.
pub fn q_theta_pi_via_l<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    theta: &DMatrix<T>,
    pi: &DMatrix<T>,
) -> DMatrix<T> {
    let l = l_of_pi(sys, w, pi);
    let r = r_of_pi(sys, w, pi);
    symmetrize(&(pi_lyap_q(sys, w, pi) + l.transpose() * theta + theta.transpose() * &l + theta.transpose() * r * theta))
}

/// Riccati residual matrix `Q̂_Π = ΠA + AᵀΠ + ΣCᵀΠC + Q − L_Πᵀ(R+ΣDᵀΠD)†L_Π`.
pub fn q_hat<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    pi: &DMatrix<T>,
    policy: &PinvPolicy,
) -> DMatrix<T> {
    let l = l_of_pi(sys, w, pi);
    let r = r_of_pi_truncated(sys, w, pi, policy);
    symmetrize(&(pi_lyap_q(sys, w, pi) - l.transpose() * pinv(&r, policy) * l))
}

/// The block matrix
///
/// ```text
/// M_{Θ,Π} = [ Q_{Θ,Π}                L_Πᵀ + Θᵀ(R+ΣDᵀΠD) ]
///           [ L_Π + (R+ΣDᵀΠD)Θ       R + ΣDᵀΠD          ]
/// ```
pub fn m_theta_pi<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    theta: &DMatrix<T>,
    pi: &DMatrix<T>,
) -> DMatrix<T> {
    let (n, m) = (sys.n(), sys.m());
    let r = r_of_pi(sys, w, pi);
    let off = l_of_pi(sys, w, pi) + &r * theta;
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(&q_theta_pi(sys, w, theta, pi));
    out.view_mut((0, n), (n, m)).copy_from(&off.transpose());
    out.view_mut((n, 0), (m, n)).copy_from(&off);
    out.view_mut((n, n), (m, m)).copy_from(&r);
    out
}

/// Outcome of a range-inclusion test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeCheck<T: Real> {
    pub holds: bool,
    pub defect: T,
}

/// Tests `ℛ(Y) ⊆ ℛ(M)` through `‖(I − MM†)Y‖ / (1 + ‖Y‖)`.
pub fn check_range<T: Real>(y: &DMatrix<T>, m: &DMatrix<T>, policy: &PinvPolicy) -> RangeCheck<T> {
    let proj = m * pinv(m, policy);
    let resid = y - proj * y;
    let defect = fro(&resid) / (T::one() + fro(y));
    RangeCheck { holds: defect <= T::lit(policy.range_tol()), defect }
}

pub fn check_range_vec<T: Real>(y: &DVector<T>, m: &DMatrix<T>, policy: &PinvPolicy) -> RangeCheck<T> {
    check_range(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()), m, policy)
}

/// Element of `Υ[Π]`:
/// `Θ₀ = −(R+ΣDᵀΠD)†L_Π + [I − (R+ΣDᵀΠD)†(R+ΣDᵀΠD)]Λ`.
///
/// Requires `ℛ(L_Π) ⊆ ℛ(R+ΣDᵀΠD)`.
pub fn upsilon<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    pi: &DMatrix<T>,
    lambda: &DMatrix<T>,
    policy: &PinvPolicy,
) -> Result<DMatrix<T>> {
    sys.check_gain(lambda)?;
    let r = r_of_pi_truncated(sys, w, pi, policy);
    let l = l_of_pi(sys, w, pi);
    let range = check_range(&l, &r, policy);
    if !range.holds {
        return Err(Error::RangeViolation { defect: range.defect.as_f64() });
    }
    let (particular, kernel) = upsilon_parts(&r, &l, policy);
    Ok(particular + kernel * lambda)
}

/// `(−M†L, I − M†M)`.
fn upsilon_parts<T: Real>(r: &DMatrix<T>, l: &DMatrix<T>, policy: &PinvPolicy) -> (DMatrix<T>, DMatrix<T>) {
    let rp = pinv(r, policy);
    let m = r.nrows();
    let kernel = DMatrix::identity(m, m) - &rp * r;
    (-(&rp * l), kernel)
}

/// Solves `PA_cl + A_clᵀP + Σₖ C_clᵀPC_cl + RHS = 0` for a stable closed loop.
pub fn lyap_stationary<T: Real>(
    a_cl: &DMatrix<T>,
    c_cl: &[DMatrix<T>],
    rhs: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let n = a_cl.nrows();
    if a_cl.ncols() != n || rhs.shape() != (n, n) || c_cl.iter().any(|c| c.shape() != (n, n)) {
        return Err(Error::Dimension("lyap_stationary: all matrices must be n x n".into()));
    }
    let mut f = a_cl + a_cl.transpose();
    for c in c_cl {
        f += c.transpose() * c;
    }
    if !(max_sym_eig(&f) < T::zero()) {
        return Err(Error::NotStabilizing);
    }
    linalg::solve_adjoint_lyapunov(a_cl, c_cl, rhs)
}

/// ARE residual `ΠA + AᵀΠ + ΣCᵀΠC + Q − L_Πᵀ(R+ΣDᵀΠD)⁻¹L_Π` with an exact
/// inverse; fails if `R + ΣDᵀΠD` is singular.
pub fn are_residual<T: Real>(sys: &LinearSystem<T>, w: &CostWeights<T>, p: &DMatrix<T>) -> Result<DMatrix<T>> {
    let l = l_of_pi(sys, w, p);
    let r = r_of_pi(sys, w, p);
    let rinv_l = solve_square(&r, &l, "R + D'PD")?;
    Ok(symmetrize(&(pi_lyap_q(sys, w, p) - l.transpose() * rinv_l)))
}

/// Feedback induced by `P`: `−(R+ΣDᵀPD)⁻¹(BᵀP + ΣDᵀPC + S)`.
pub fn induced_feedback<T: Real>(sys: &LinearSystem<T>, w: &CostWeights<T>, p: &DMatrix<T>) -> Result<DMatrix<T>> {
    let l = l_of_pi(sys, w, p);
    let r = r_of_pi(sys, w, p);
    Ok(-solve_square(&r, &l, "R + D'PD")?)
}

#[derive(Debug, Clone, Copy)]
pub struct NkOptions {
    pub max_iter: usize,
    /// Relative ARE residual target, `‖res‖ ≤ tol·(1 + ‖P‖)`.
    pub tol: f64,
    /// `R + ΣDᵀPD` must stay above `pos_tol·(1 + ‖R‖)` in its smallest eigenvalue.
    pub pos_tol: f64,
}

impl Default for NkOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-12, pos_tol: 1e-12 }
    }
}

/// Stabilizing solution of the algebraic Riccati equation.
#[derive(Debug, Clone, PartialEq)]
pub struct AreSolution<T: Real> {
    pub p: DMatrix<T>,
    /// Induced stabilizing feedback.
    pub theta: DMatrix<T>,
    pub iterations: usize,
    /// Final `‖ARE(P)‖_F`.
    pub residual: T,
    /// `‖ARE(P_k)‖_F` per iteration.
    pub residual_trace: Vec<T>,
}

/// Newton–Kleinman iteration from a stabilizer `theta_init`.
///
/// Each step evaluates the closed-loop cost of the current gain by a
/// Lyapunov solve and updates `Θ ← −(R+ΣDᵀPD)⁻¹(BᵀP + ΣDᵀPC + S)`.
/// The iteration is only meaningful while `R + ΣDᵀPD ≻ 0`.
pub fn newton_kleinman<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    theta_init: &DMatrix<T>,
    opts: &NkOptions,
) -> Result<AreSolution<T>> {
    sys.check_gain(theta_init)?;
    if !is_stabilizer(sys, theta_init) {
        return Err(Error::NotStabilizing);
    }
    // The requested tolerance is floored at the resolution of `T`.
    let tol = T::lit(opts.tol).max(T::lit(64.0) * T::default_epsilon());
    let pos_tol = T::lit(opts.pos_tol) * (T::one() + fro(&w.r));
    let mut theta = theta_init.clone();
    let mut trace = Vec::new();
    let mut best: Option<(T, DMatrix<T>, DMatrix<T>)> = None;

    for k in 0..opts.max_iter {
        let (a_cl, c_cl) = closed_loop_gains(sys, &theta);
        let rhs = &w.q + w.s.transpose() * &theta + theta.transpose() * &w.s + theta.transpose() * &w.r * &theta;
        let p = lyap_stationary(&a_cl, &c_cl, &symmetrize(&rhs))?;
        let r = r_of_pi(sys, w, &p);
        let rmin = min_sym_eig(&r);
        if !(rmin > pos_tol) {
            return Err(Error::LostPositivity { iteration: k, min_eig: rmin.as_f64() });
        }
        let next = induced_feedback(sys, w, &p)?;
        let residual = fro(&are_residual(sys, w, &p)?);
        trace.push(residual);
        let done = residual <= tol * (T::one() + fro(&p));
        let improved = best.as_ref().map_or(true, |(r, _, _)| residual < *r);
        if improved {
            best = Some((residual, p.clone(), next.clone()));
        }
        if done {
            if !is_stabilizer(sys, &next) {
                return Err(Error::LostStability { iteration: k });
            }
            return Ok(AreSolution { p, theta: next, iterations: k + 1, residual, residual_trace: trace });
        }
        // Rounding floor: Newton has converged but the residual cannot reach `tol`.
        if k >= 3 && !improved && trace[k - 1] <= T::lit(1e3) * tol * (T::one() + fro(&p)) {
            let (residual, p, next) = best.expect("at least one iterate");
            if !is_stabilizer(sys, &next) {
                return Err(Error::LostStability { iteration: k });
            }
            return Ok(AreSolution { p, theta: next, iterations: k + 1, residual, residual_trace: trace });
        }
        if !is_stabilizer(sys, &next) {
            return Err(Error::LostStability { iteration: k });
        }
        theta = next;
    }
    let residual = trace.last().copied().unwrap_or_else(T::zero);
    Err(Error::MaxIterations { iterations: opts.max_iter, residual: residual.as_f64() })
}

/// Tolerances of the certificate checks, relative to `1 + ‖·‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateTolerances {
    pub psd: f64,
    pub are: f64,
}

impl Default for CertificateTolerances {
    fn default() -> Self {
        Self { psd: 1e-9, are: 1e-10 }
    }
}

/// Condition that made a certificate check fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateCondition {
    /// `R + ΣDᵀΠ₀D ⪰ 0`.
    ControlWeightNotPsd,
    /// `ℛ(L_Π₀) ⊆ ℛ(R + ΣDᵀΠ₀D)`.
    CrossTermRange,
    /// `Q̂_Π₀ ⪰ 0`.
    RiccatiInequality,
    /// `Q̂_Π₀ = 0`.
    RiccatiEquation,
    /// `Bᵀη₀ + ΣDᵀΠ₀σ + ρ ∈ ℛ(R + ΣDᵀΠ₀D)`.
    ControlOffsetRange,
    /// `A_clᵀη₀ + Π₀b + ΣC_clᵀΠ₀σ + q + Θ₀ᵀρ ∈ ℛ(Q_{Θ₀,Π₀})`.
    StateOffsetRange,
    /// No member of `Υ[Π₀]` found that is a stabilizer.
    NoStabilizingMinimizer,
    /// The η-equation could not be solved.
    EtaEquation,
    /// Lyapunov solve for the convexity certificate failed.
    LyapunovSolve,
    /// Convexity margin `δ ≤ 0`.
    ConvexityMargin,
}

/// A failed certificate check: the first violated condition and its measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateFailure {
    pub condition: CertificateCondition,
    pub value: f64,
}

impl std::fmt::Display for CertificateFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?} violated ({:e})", self.condition, self.value)
    }
}

fn fail<T>(condition: CertificateCondition, value: impl Real) -> std::result::Result<T, CertificateFailure> {
    Err(CertificateFailure { condition, value: value.as_f64() })
}

/// Residuals recorded by [`check_h2`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H2Residuals<T: Real> {
    /// Smallest eigenvalue of `Q̂_Π₀` (slack of the Riccati inequality).
    pub inequality_slack: T,
    pub control_weight_min_eig: T,
    pub cross_term_defect: T,
    pub control_offset_defect: T,
    pub state_offset_defect: T,
}

/// Finiteness certificate: `Π₀` solving the Riccati inequality with a
/// compatible `(Θ₀, η₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateH2<T: Real> {
    pub pi0: DMatrix<T>,
    pub theta0: DMatrix<T>,
    pub eta0: DVector<T>,
    pub residuals: H2Residuals<T>,
    /// Uniform lower bound of the ergodic cost implied by the certificate.
    pub lower_bound: T,
}

struct RiccatiCommon<T: Real> {
    pi: DMatrix<T>,
    r: DMatrix<T>,
    l: DMatrix<T>,
    r_min: T,
    cross_defect: T,
}

fn riccati_common<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    pi0: &DMatrix<T>,
    policy: &PinvPolicy,
    tols: &CertificateTolerances,
) -> std::result::Result<RiccatiCommon<T>, CertificateFailure> {
    let pi = symmetrize(pi0);
    let r = r_of_pi_truncated(sys, w, &pi, policy);
    let l = l_of_pi(sys, w, &pi);
    let r_min = min_sym_eig(&r);
    let r_tol = T::lit(tols.psd) * (T::one() + fro(&r));
    if r_min < -r_tol {
        return fail(CertificateCondition::ControlWeightNotPsd, r_min);
    }
    let r = linalg::chop_small_eigenvalues(&r, r_tol);
    let range = check_range(&l, &r, policy);
    if !range.holds {
        return fail(CertificateCondition::CrossTermRange, range.defect);
    }
    Ok(RiccatiCommon { pi, r, l, r_min, cross_defect: range.defect })
}

/// `ΣDₖᵀΠσₖ + ρ` and `Σ⟨Πσₖ,σₖ⟩`.
fn noise_terms<T: Real>(sys: &LinearSystem<T>, w: &CostWeights<T>, pi: &DMatrix<T>) -> (DVector<T>, T) {
    let mut r0 = w.rho.clone();
    let mut sig = T::zero();
    for (d, s) in sys.d.iter().zip(&sys.sigma) {
        let ps = pi * s;
        r0 += d.transpose() * &ps;
        sig += s.dot(&ps);
    }
    (r0, sig)
}

/// Checks the finiteness certificate at `Π₀`.
///
/// `Θ₀ = upsilon(Π₀, Λ)` with `Λ = 0` when not given. When `eta0` is not
/// supplied it is chosen as the least-squares solution of both range
/// memberships, which are affine in `η₀`.
pub fn check_h2<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    pi0: &DMatrix<T>,
    lambda: Option<&DMatrix<T>>,
    eta0: Option<&DVector<T>>,
    policy: &PinvPolicy,
) -> std::result::Result<CertificateH2<T>, CertificateFailure> {
    let tols = CertificateTolerances::default();
    let common = riccati_common(sys, w, pi0, policy, &tols)?;
    let pi = &common.pi;
    let qh = q_hat(sys, w, pi, policy);
    let slack = min_sym_eig(&qh);
    if slack < -T::lit(tols.psd) * (T::one() + fro(&qh)) {
        return fail(CertificateCondition::RiccatiInequality, slack);
    }
    let (n, m) = (sys.n(), sys.m());
    let (particular, kernel) = upsilon_parts(&common.r, &common.l, policy);
    let theta0 = match lambda {
        Some(lam) => particular + &kernel * lam,
        None => particular,
    };
    // Q_{Θ₀,Π₀} is PSD up to rounding; eigenvalues at the rounding level
    // would otherwise be inverted by the pseudo-inverse.
    let q0 = q_theta_pi(sys, w, &theta0, pi);
    let q0 = linalg::chop_small_eigenvalues(&q0, T::lit(tols.psd) * (T::one() + fro(&q0) + fro(pi)));
    let (r0, sig) = noise_terms(sys, w, pi);
    let w0 = eta_rhs(sys, w, &theta0, pi);
    let a_cl = &sys.a + &sys.b * &theta0;

    let eta0 = match eta0 {
        Some(e) => e.clone(),
        None => {
            let proj_r = DMatrix::identity(m, m) - &common.r * pinv(&common.r, policy);
            let proj_q = DMatrix::identity(n, n) - &q0 * pinv(&q0, policy);
            let mut k = DMatrix::zeros(m + n, n);
            k.view_mut((0, 0), (m, n)).copy_from(&(&proj_r * sys.b.transpose()));
            k.view_mut((m, 0), (n, n)).copy_from(&(&proj_q * a_cl.transpose()));
            let mut k0 = DVector::zeros(m + n);
            k0.rows_mut(0, m).copy_from(&(&proj_r * &r0));
            k0.rows_mut(m, n).copy_from(&(&proj_q * &w0));
            -(pinv(&k, policy) * k0)
        }
    };
    let r_vec = sys.b.transpose() * &eta0 + &r0;
    let w_vec = a_cl.transpose() * &eta0 + &w0;
    let r_range = check_range_vec(&r_vec, &common.r, policy);
    if !r_range.holds {
        return fail(CertificateCondition::ControlOffsetRange, r_range.defect);
    }
    let w_range = check_range_vec(&w_vec, &q0, policy);
    if !w_range.holds {
        return fail(CertificateCondition::StateOffsetRange, w_range.defect);
    }
    let lower_bound = -(w_vec.transpose() * pinv(&q0, policy) * &w_vec)[0]
        - (r_vec.transpose() * pinv(&common.r, policy) * &r_vec)[0]
        + sig
        + T::lit(2.0) * eta0.dot(&sys.drift);
    Ok(CertificateH2 {
        pi0: pi.clone(),
        theta0,
        eta0,
        residuals: H2Residuals {
            inequality_slack: slack,
            control_weight_min_eig: common.r_min,
            cross_term_defect: common.cross_defect,
            control_offset_defect: r_range.defect,
            state_offset_defect: w_range.defect,
        },
        lower_bound,
    })
}

/// Residuals recorded by [`check_h3`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H3Residuals<T: Real> {
    /// `‖Q̂_Π₀‖_F`.
    pub are_residual: T,
    pub control_weight_min_eig: T,
    pub cross_term_defect: T,
    pub control_offset_defect: T,
    /// Residual of the η-equation at `(Θ̄₀, η̄₀)`.
    pub eta_residual: T,
    /// `λ(Θ̄₀)`, positive for a stabilizer.
    pub stability_margin: T,
}

/// Solvability certificate with the optimal strategy `(Θ̄₀, v̄₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateH3<T: Real> {
    pub pi0: DMatrix<T>,
    pub theta_bar: DMatrix<T>,
    pub eta_bar: DVector<T>,
    pub v_bar: DVector<T>,
    /// Optimal value `Σ⟨Π₀σ,σ⟩ + 2⟨η̄₀,b⟩ − ⟨(R+ΣDᵀΠ₀D)†r, r⟩`.
    pub value: T,
    pub residuals: H3Residuals<T>,
}

/// Checks the solvability certificate at `Π₀`.
///
/// If `lambda` is `None` and `Υ[Π₀]` is not a singleton, a stabilizing
/// member is searched for by running [`find_stabilizer_with`] on the system
/// restricted to the free directions `Θ = Θ_p + (I − M†M)Λ`.
/// `v̄₀ = −M†r + (I − M†M)ν` with `M = R + ΣDᵀΠ₀D`.
pub fn check_h3<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    pi0: &DMatrix<T>,
    lambda: Option<&DMatrix<T>>,
    nu: Option<&DVector<T>>,
    policy: &PinvPolicy,
) -> std::result::Result<CertificateH3<T>, CertificateFailure> {
    let tols = CertificateTolerances::default();
    let common = riccati_common(sys, w, pi0, policy, &tols)?;
    let pi = &common.pi;
    let qh = q_hat(sys, w, pi, policy);
    let are = fro(&qh);
    if are > T::lit(tols.are) * (T::one() + fro(pi)) {
        return fail(CertificateCondition::RiccatiEquation, are);
    }
    let (particular, kernel) = upsilon_parts(&common.r, &common.l, policy);
    let theta_bar = match lambda {
        Some(lam) => particular + &kernel * lam,
        None if fro(&kernel) <= T::lit(policy.rel_tol) || is_stabilizer(sys, &particular) => particular,
        None => {
            // A + BΘ = (A + BΘ_p) + (B K)Λ, C + DΘ = (C + DΘ_p) + (D K)Λ
            let (a_p, c_p) = closed_loop_gains(sys, &particular);
            let reduced = LinearSystem {
                a: a_p,
                b: &sys.b * &kernel,
                c: c_p,
                d: sys.d.iter().map(|d| d * &kernel).collect(),
                drift: sys.drift.clone(),
                sigma: sys.sigma.clone(),
            };
            match find_stabilizer_with(&reduced, &StabilizerSearch::default()) {
                Ok(lam) => particular + &kernel * lam,
                Err(_) => particular,
            }
        }
    };
    if !is_stabilizer(sys, &theta_bar) {
        let margin = f_of_theta(sys, &theta_bar).map(|f| max_sym_eig(&f)).unwrap_or_else(|_| T::one());
        return fail(CertificateCondition::NoStabilizingMinimizer, margin);
    }
    let eta_bar = match eta_solve(sys, w, &theta_bar, pi) {
        Ok(e) => e,
        Err(_) => return fail(CertificateCondition::EtaEquation, T::one()),
    };
    let a_cl = &sys.a + &sys.b * &theta_bar;
    let eta_residual = (a_cl.transpose() * &eta_bar + eta_rhs(sys, w, &theta_bar, pi)).norm();
    let (r0, sig) = noise_terms(sys, w, pi);
    let r_vec = sys.b.transpose() * &eta_bar + r0;
    let r_range = check_range_vec(&r_vec, &common.r, policy);
    if !r_range.holds {
        return fail(CertificateCondition::ControlOffsetRange, r_range.defect);
    }
    let rp = pinv(&common.r, policy);
    let mut v_bar = -(&rp * &r_vec);
    if let Some(nu) = nu {
        v_bar += &kernel * nu;
    }
    let value = sig + T::lit(2.0) * eta_bar.dot(&sys.drift) - (r_vec.transpose() * &rp * &r_vec)[0];
    let stability_margin = -max_sym_eig(&f_of_theta(sys, &theta_bar).expect("shape checked"));
    Ok(CertificateH3 {
        pi0: pi.clone(),
        theta_bar,
        eta_bar,
        v_bar,
        value,
        residuals: H3Residuals {
            are_residual: are,
            control_weight_min_eig: common.r_min,
            cross_term_defect: common.cross_defect,
            control_offset_defect: r_range.defect,
            eta_residual,
            stability_margin,
        },
    })
}

/// Result of the uniform-convexity test for the stabilized homogeneous
/// problem.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformConvexity<T: Real> {
    pub pi: DMatrix<T>,
    /// `λ_min(R + ΣDᵀΠD − KᵀQ₀⁻¹K)`, `K = ΠB + ΣC_clᵀΠD + Sᵀ + ΘᵀR`.
    pub delta: T,
}

impl<T: Real> UniformConvexity<T> {
    pub fn certified(&self) -> bool {
        self.delta > T::zero()
    }
}

/// Solves the Lyapunov equation
/// `ΠA_cl + A_clᵀΠ + ΣC_clᵀΠC_cl + SᵀΘ + ΘᵀS + ΘᵀRΘ + Q − Q₀ = 0`
/// and returns the convexity margin `δ`; `δ > 0` certifies that the
/// stabilized homogeneous cost is uniformly convex in the control.
pub fn uniform_convexity_certificate<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    theta: &DMatrix<T>,
    q0: &DMatrix<T>,
) -> Result<UniformConvexity<T>> {
    sys.check_gain(theta)?;
    sys.check_square(q0, "Q0")?;
    if !is_stabilizer(sys, theta) {
        return Err(Error::NotStabilizing);
    }
    let q0 = symmetrize(q0);
    if !(min_sym_eig(&q0) > T::zero()) {
        return Err(Error::InvalidArgument("Q0 must be positive definite".into()));
    }
    let (a_cl, c_cl) = closed_loop_gains(sys, theta);
    let rhs = &w.q + w.s.transpose() * theta + theta.transpose() * &w.s + theta.transpose() * &w.r * theta - &q0;
    let pi = lyap_stationary(&a_cl, &c_cl, &symmetrize(&rhs))?;
    let mut k = &pi * &sys.b + w.s.transpose() + theta.transpose() * &w.r;
    for (c, d) in c_cl.iter().zip(&sys.d) {
        k += c.transpose() * &pi * d;
    }
    let q0_inv_k = solve_square(&q0, &k, "Q0")?;
    let margin = r_of_pi(sys, w, &pi) - k.transpose() * q0_inv_k;
    Ok(UniformConvexity { delta: min_sym_eig(&margin), pi })
}

/// Candidate `Π₀` matrices for certificate scans.
///
/// Multiples of the identity on a symmetric grid (unscaled and scaled by the
/// weight norms) plus the symmetrized least-squares solution of
/// `BᵀΠ = −S`, which annihilates the cross term when `D = 0`.
pub fn pi_candidates<T: Real>(sys: &LinearSystem<T>, w: &CostWeights<T>, policy: &PinvPolicy) -> Vec<DMatrix<T>> {
    let n = sys.n();
    let eye = DMatrix::<T>::identity(n, n);
    let mut out = Vec::new();
    let annihilator = symmetrize(&-(pinv(&sys.b.transpose(), policy) * &w.s));
    out.push(annihilator);
    let scale = (fro(&w.q) + fro(&w.s) + fro(&w.r)).max(T::one());
    for k in -20i32..=20 {
        let s = T::lit(0.5 * k as f64);
        out.push(&eye * s);
        if scale != T::one() {
            out.push(&eye * (s * scale));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn ex1(q: f64, b: f64, sigma: f64) -> (LinearSystem<f64>, CostWeights<f64>) {
        (
            LinearSystem::scalar(1.0, 1.0, 1.0, 0.0, b, sigma),
            CostWeights::scalar(q, -1.0, 0.0, 0.0, 0.0),
        )
    }

    fn ex2() -> (LinearSystem<f64>, CostWeights<f64>) {
        (
            LinearSystem::scalar(1.0, 1.0, 1.0, 1.0, 0.0, 0.0),
            CostWeights::scalar(-1.0, -2.5, -1.0, 0.0, 0.0),
        )
    }

    fn lqr_scalar(b: f64, sigma: f64) -> (LinearSystem<f64>, CostWeights<f64>) {
        (
            LinearSystem::scalar(-1.0, 1.0, 0.0, 0.0, b, sigma),
            CostWeights::scalar(1.0, 0.0, 1.0, 0.0, 0.0),
        )
    }

    #[test]
    fn policy_bounds() {
        assert!(PinvPolicy::new(1e-10).is_ok());
        assert!(PinvPolicy::new(0.0).is_err());
        assert!(PinvPolicy::new(1e-3).is_err());
    }

    #[test]
    fn l_of_pi_examples() {
        let (sys, w) = ex1(-1.0, 1.0, 1.0);
        assert_eq!(l_of_pi(&sys, &w, &s(0.0)), w.s);
        assert_eq!(l_of_pi(&sys, &w, &s(1.0))[(0, 0)], 0.0);
        let sys = LinearSystem::scalar(1.0, 1.0, 1.0, 1.0, 0.0, 0.0);
        let w = CostWeights::scalar(0.0, -2.5, 0.0, 0.0, 0.0);
        assert_eq!(l_of_pi(&sys, &w, &s(1.0))[(0, 0)], -0.5);
    }

    #[test]
    fn q_theta_pi_examples() {
        let (sys, w) = ex1(-1.0, 1.0, 1.0);
        assert_eq!(q_theta_pi(&sys, &w, &s(0.0), &s(0.0)), w.q);
        assert!((q_theta_pi(&sys, &w, &s(-3.0), &s(1.0))[(0, 0)] - 2.0).abs() < 1e-14);
        let a = q_theta_pi(&sys, &w, &s(-2.2), &s(0.7));
        let b = q_theta_pi_via_l(&sys, &w, &s(-2.2), &s(0.7));
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn q_hat_examples() {
        let p = PinvPolicy::default();
        let (sys, w) = ex1(-1.0, 1.0, 1.0);
        assert!((q_hat(&sys, &w, &s(1.0), &p)[(0, 0)] - 2.0).abs() < 1e-14);
        let (sys, w) = ex2();
        assert!((q_hat(&sys, &w, &s(1.5), &p)[(0, 0)] - 3.0).abs() < 1e-13);
        // Π = 0, R ≻ 0: Schur complement Q − SᵀR⁻¹S
        let (sys, _) = lqr_scalar(0.0, 1.0);
        let w = CostWeights::scalar(3.0, 1.0, 2.0, 0.0, 0.0);
        assert!((q_hat(&sys, &w, &s(0.0), &p)[(0, 0)] - 2.5).abs() < 1e-14);
    }

    #[test]
    fn upsilon_examples() {
        let p = PinvPolicy::default();
        let (sys, w) = lqr_scalar(0.0, 1.0);
        let t = upsilon(&sys, &w, &s(0.3), &s(17.0), &p).unwrap();
        assert!((t[(0, 0)] + 0.3).abs() < 1e-14);
        let (sys, w) = ex1(-1.0, 1.0, 1.0);
        assert_eq!(upsilon(&sys, &w, &s(1.0), &s(-4.2), &p).unwrap()[(0, 0)], -4.2);
        let (sys, w) = ex2();
        assert!((upsilon(&sys, &w, &s(1.5), &s(0.0), &p).unwrap()[(0, 0)] + 1.0).abs() < 1e-14);
        let (sys, w) = ex1(-1.0, 1.0, 1.0);
        assert!(matches!(upsilon(&sys, &w, &s(2.0), &s(0.0), &p), Err(Error::RangeViolation { .. })));
    }

    #[test]
    fn range_examples() {
        let p = PinvPolicy::default();
        let zero = DMatrix::<f64>::zeros(2, 1);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(check_range(&zero, &m, &p), RangeCheck { holds: true, defect: 0.0 });
        let y = DMatrix::from_row_slice(2, 1, &[0.3, -2.0]);
        let rc = check_range(&y, &DMatrix::identity(2, 2), &p);
        assert!(rc.holds && rc.defect < 1e-15);
        let y = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let rc = check_range(&y, &m, &p);
        assert!(!rc.holds && (rc.defect - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lyap_examples() {
        assert!((lyap_stationary(&s(-1.0), &[], &s(2.0)).unwrap()[(0, 0)] - 1.0).abs() < 1e-15);
        let r2 = 2f64.sqrt();
        let rhs = 1.0 + (r2 - 1.0).powi(2);
        let p = lyap_stationary(&s(-r2), &[s(0.0)], &s(rhs)).unwrap();
        assert!((p[(0, 0)] - (r2 - 1.0)).abs() < 1e-15);
        assert_eq!(lyap_stationary(&s(-1.0), &[], &s(0.0)).unwrap()[(0, 0)], 0.0);
        assert_eq!(lyap_stationary(&s(1.0), &[], &s(0.0)), Err(Error::NotStabilizing));
    }

    #[test]
    fn nk_scalar_lqr() {
        let (sys, w) = lqr_scalar(0.0, 1.0);
        let sol = newton_kleinman(&sys, &w, &s(0.0), &NkOptions::default()).unwrap();
        let r2m1 = 2f64.sqrt() - 1.0;
        assert!((sol.p[(0, 0)] - r2m1).abs() < 1e-14);
        assert!((sol.theta[(0, 0)] + r2m1).abs() < 1e-14);
        assert!(sol.residual <= 1e-12 * (1.0 + sol.p.norm()));
    }

    #[test]
    fn nk_zero_cost_is_zero_fixed_point() {
        let sys = LinearSystem::scalar(-2.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        let w = CostWeights::scalar(0.0, 0.0, 1.0, 0.0, 0.0);
        let sol = newton_kleinman(&sys, &w, &s(0.0), &NkOptions::default()).unwrap();
        assert_eq!(sol.p[(0, 0)], 0.0);
        assert_eq!(sol.theta[(0, 0)], 0.0);
    }

    #[test]
    fn nk_requires_stabilizer_and_positivity() {
        let (sys, w) = lqr_scalar(0.0, 1.0);
        assert_eq!(newton_kleinman(&sys, &w, &s(2.0), &NkOptions::default()), Err(Error::NotStabilizing));
        let (sys, w) = ex1(-1.0, 1.0, 1.0);
        assert!(matches!(
            newton_kleinman(&sys, &w, &s(-3.0), &NkOptions::default()),
            Err(Error::LostPositivity { iteration: 0, .. })
        ));
    }

    #[test]
    fn nk_drift_only_regularized_matches_closed_form() {
        let (sys, w) = ex1(-1.0, 1.0, 1.0);
        for &delta in &[1e-1, 1e-3, 1e-6] {
            let sol = newton_kleinman(&sys, &w.regularized(delta), &s(-3.0), &NkOptions::default()).unwrap();
            let (alpha, beta) = (2.0, 1.5);
            let p = 1.0 + delta * beta + (delta * alpha + delta * delta * beta * beta).sqrt();
            assert!((sol.p[(0, 0)] - p).abs() < 1e-10 * p, "delta {delta}: {} vs {p}", sol.p[(0, 0)]);
        }
    }

    #[test]
    fn nk_control_noise_unregularized() {
        let (sys, w) = ex2();
        let sol = newton_kleinman(&sys, &w, &s(-2.0), &NkOptions::default()).unwrap();
        // P² − 6P + 21/4 = 0, stabilizing root 3 + √(15)/2
        let p = 3.0 + 15f64.sqrt() / 2.0;
        assert!((sol.p[(0, 0)] - p).abs() < 1e-10);
        assert!(is_stabilizer(&sys, &sol.theta));
    }

    #[test]
    fn h2_drift_only_certificate() {
        let p = PinvPolicy::default();
        let (sys, w) = ex1(-1.0, 1.0, 1.0);
        let cert = check_h2(&sys, &w, &s(1.0), None, None, &p).unwrap();
        assert!(cert.eta0[0].abs() < 1e-14);
        assert!((cert.lower_bound + 1.0).abs() < 1e-12);
        let cert = check_h2(&sys, &w, &s(1.0), None, Some(&DVector::from_element(1, 0.0)), &p).unwrap();
        assert!((cert.residuals.inequality_slack - 2.0).abs() < 1e-14);
    }

    #[test]
    fn h2_classical_psd_weights() {
        let p = PinvPolicy::default();
        let sys = LinearSystem::scalar(-1.0, 1.0, 0.5, 0.2, 0.0, 1.0);
        let w = CostWeights::scalar(2.0, 0.0, 1.0, 0.0, 0.0);
        assert!(check_h2(&sys, &w, &s(0.0), None, None, &p).is_ok());
    }

    #[test]
    fn h2_fails_on_grid_when_not_finite() {
        let p = PinvPolicy::default();
        let (sys, w) = ex1(-4.0, 1.0, 1.0);
        for k in -40..=40 {
            let pi = s(k as f64 * 0.25);
            assert!(check_h2(&sys, &w, &pi, None, None, &p).is_err(), "pi = {}", pi[(0, 0)]);
        }
        let err = check_h2(&sys, &w, &s(1.0), None, None, &p).unwrap_err();
        assert_eq!(err.condition, CertificateCondition::RiccatiInequality);
        let err = check_h2(&sys, &w, &s(0.5), None, None, &p).unwrap_err();
        assert_eq!(err.condition, CertificateCondition::CrossTermRange);
    }

    #[test]
    fn h3_positive_definite_case() {
        let p = PinvPolicy::default();
        let (sys, w) = lqr_scalar(1.0, 1.0);
        let r2m1 = 2f64.sqrt() - 1.0;
        let cert = check_h3(&sys, &w, &s(r2m1), None, None, &p).unwrap();
        assert!((cert.theta_bar[(0, 0)] + r2m1).abs() < 1e-14);
        let e = crate::stationary::ergodic_cost(
            &sys,
            &w,
            &crate::model::Strategy::new(cert.theta_bar.clone(), cert.v_bar.clone()),
        )
        .unwrap();
        assert!((e - cert.value).abs() < 1e-12);
    }

    #[test]
    fn h3_drift_only_case_two() {
        let p = PinvPolicy::default();
        let (sys, w) = ex1(-3.0, -1.0, 1.0);
        let cert = check_h3(&sys, &w, &s(1.0), None, None, &p).unwrap();
        assert!(is_stabilizer(&sys, &cert.theta_bar));
        assert_eq!(cert.eta_bar[0], 0.0);
        assert!((cert.value - 1.0).abs() < 1e-14);
        let cert = check_h3(&sys, &w, &s(1.0), Some(&s(-7.0)), Some(&DVector::from_element(1, 2.0)), &p).unwrap();
        assert_eq!(cert.theta_bar[(0, 0)], -7.0);
        assert_eq!(cert.v_bar[0], 2.0);
    }

    #[test]
    fn h3_fails_when_riccati_equation_fails() {
        let p = PinvPolicy::default();
        let (sys, w) = ex1(-1.0, 1.0, 1.0);
        let err = check_h3(&sys, &w, &s(1.0), None, None, &p).unwrap_err();
        assert_eq!(err.condition, CertificateCondition::RiccatiEquation);
        assert!((err.value - 2.0).abs() < 1e-14);
    }

    #[test]
    fn convexity_examples() {
        let sys: LinearSystem<f64> = LinearSystem::single(
            -DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            DVector::zeros(2),
        )
        .unwrap();
        let w = CostWeights::new(
            2,
            2,
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::zeros(2),
        )
        .unwrap();
        let uc = uniform_convexity_certificate(&sys, &w, &DMatrix::zeros(2, 2), &(DMatrix::identity(2, 2) * 0.5)).unwrap();
        assert!((uc.pi.clone() - DMatrix::identity(2, 2) * 0.25).norm() < 1e-15);
        // K = Π, δ = 1 − (1/4)²·2
        assert!((uc.delta - 0.875).abs() < 1e-14);
        assert!(uc.certified());

        let sys = LinearSystem::scalar(-1.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        let w = CostWeights::scalar(10.0, 0.0, -1.0, 0.0, 0.0);
        let deltas: Vec<f64> = [1.0, 2.0, 5.0]
            .iter()
            .map(|&q0| uniform_convexity_certificate(&sys, &w, &s(0.0), &s(q0)).unwrap().delta)
            .collect();
        assert!((deltas[0] - 3.5).abs() < 1e-14);
        assert!(deltas.iter().any(|&d| d > 0.0));

        let (sys, w) = ex1(-1.0, 1.0, 1.0);
        assert_eq!(uniform_convexity_certificate(&sys, &w, &s(0.0), &s(1.0)), Err(Error::NotStabilizing));
    }
}
