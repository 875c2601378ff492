//! Invariant-measure moments and the ergodic cost of an admissible strategy.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, fro, min_sym_eig, solve_vec, symmetrize};
use crate::model::{is_stabilizer, ClosedLoop, CostWeights, LinearSystem, Strategy};
use crate::riccati::m_theta_pi;
use crate::{Error, Real, Result};

/// First moment and second raw moment of the invariant measure.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryMoments<T: Real> {
    pub m1: DVector<T>,
    pub m2: DMatrix<T>,
}

impl<T: Real> StationaryMoments<T> {
    pub fn covariance(&self) -> DMatrix<T> {
        symmetrize(&(&self.m2 - &self.m1 * self.m1.transpose()))
    }

    /// Covariance PSD within `1e-8·(1 + ‖M2‖)`.
    pub fn covariance_is_psd(&self) -> bool {
        min_sym_eig(&self.covariance()) >= -T::lit(1e-8) * (T::one() + fro(&self.m2))
    }

    /// `∫ ⟨Mx,x⟩ + 2⟨c,x⟩ + k dπ`.
    pub fn integrate_quadratic(&self, m: &DMatrix<T>, c: &DVector<T>, k: T) -> T {
        (m * &self.m2).trace() + T::lit(2.0) * c.dot(&self.m1) + k
    }
}

/// Time derivatives of `(E[X], E[XXᵀ])` of the closed-loop SDE evaluated at
/// the given moments; both vanish at the invariant measure.
pub fn moment_drift<T: Real>(
    sys: &LinearSystem<T>,
    strat: &Strategy<T>,
    moments: &StationaryMoments<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let cl = ClosedLoop::new(sys, strat)?;
    let (m1, m2) = (&moments.m1, &moments.m2);
    let d1 = &cl.a_cl * m1 + &cl.drift_const;
    let mut d2 = &cl.a_cl * m2
        + m2 * cl.a_cl.transpose()
        + &cl.drift_const * m1.transpose()
        + m1 * cl.drift_const.transpose();
    for (c, s) in cl.c_cl.iter().zip(&cl.diff_const) {
        let cm = c * m1;
        d2 += c * m2 * c.transpose() + &cm * s.transpose() + s * cm.transpose() + s * s.transpose();
    }
    Ok((d1, d2))
}

/// Moments of the invariant measure of the closed loop under `(Θ, v)`.
///
/// `m1` solves `A_cl m1 + (Bv + b) = 0`; the second moment solves the
/// stationary moment equation as one `n²` linear system.
pub fn stationary_moments<T: Real>(
    sys: &LinearSystem<T>,
    strat: &Strategy<T>,
) -> Result<StationaryMoments<T>> {
    strat.check(sys)?;
    if !is_stabilizer(sys, &strat.theta) {
        return Err(Error::NotStabilizing);
    }
    let cl = ClosedLoop::new(sys, strat)?;
    let m1 = solve_vec(&cl.a_cl, &(-&cl.drift_const), "stationary mean equation")?;
    let mut rhs = &cl.drift_const * m1.transpose() + &m1 * cl.drift_const.transpose();
    for (c, s) in cl.c_cl.iter().zip(&cl.diff_const) {
        let cm = c * &m1;
        rhs += &cm * s.transpose() + s * cm.transpose() + s * s.transpose();
    }
    let m2 = linalg::solve_forward_lyapunov(&cl.a_cl, &cl.c_cl, &rhs)?;
    Ok(StationaryMoments { m1, m2 })
}

/// Coefficients `(Q_g, c_g, k_g)` of `x ↦ g(x, Θx + v)`.
pub fn closed_loop_cost<T: Real>(
    w: &CostWeights<T>,
    strat: &Strategy<T>,
) -> (DMatrix<T>, DVector<T>, T) {
    let th = &strat.theta;
    let v = &strat.v;
    let two = T::lit(2.0);
    let qg = symmetrize(&(&w.q + w.s.transpose() * th + th.transpose() * &w.s + th.transpose() * &w.r * th));
    let cg = (&w.s + &w.r * th).transpose() * v + &w.q_lin + th.transpose() * &w.rho;
    let kg = (v.transpose() * &w.r * v)[0] + two * w.rho.dot(v);
    (qg, cg, kg)
}

/// `E(Θ, v) = ∫ g(x, Θx+v) π(dx)` from given moments.
pub fn cost_from_moments<T: Real>(
    w: &CostWeights<T>,
    strat: &Strategy<T>,
    moments: &StationaryMoments<T>,
) -> T {
    let (qg, cg, kg) = closed_loop_cost(w, strat);
    moments.integrate_quadratic(&qg, &cg, kg)
}

/// Ergodic cost `E(Θ, v)` of an admissible strategy.
pub fn ergodic_cost<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    strat: &Strategy<T>,
) -> Result<T> {
    let moments = stationary_moments(sys, strat)?;
    Ok(cost_from_moments(w, strat, &moments))
}

/// Solves `(A+BΘ)ᵀη + Πb + Σₖ(Cₖ+DₖΘ)ᵀΠσₖ + q + Θᵀρ = 0`.
pub fn eta_solve<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    theta: &DMatrix<T>,
    pi: &DMatrix<T>,
) -> Result<DVector<T>> {
    sys.check_gain(theta)?;
    sys.check_square(pi, "Pi")?;
    let rhs = eta_rhs(sys, w, theta, pi);
    let a_cl = &sys.a + &sys.b * theta;
    solve_vec(&a_cl.transpose(), &(-rhs), "eta equation")
}

/// `Πb + Σₖ(Cₖ+DₖΘ)ᵀΠσₖ + q + Θᵀρ`.
pub(crate) fn eta_rhs<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    theta: &DMatrix<T>,
    pi: &DMatrix<T>,
) -> DVector<T> {
    let mut rhs = pi * &sys.drift + &w.q_lin + theta.transpose() * &w.rho;
    for ((c, d), s) in sys.c.iter().zip(&sys.d).zip(&sys.sigma) {
        rhs += (c + d * theta).transpose() * (pi * s);
    }
    rhs
}

/// Ergodic cost through the `Π`-parameterized representation
///
/// ```text
/// ∫⟨M_{Θ,Π}(x;v),(x;v)⟩dπ + 2⟨Bᵀη + ΣDₖᵀΠσₖ + ρ, v⟩ + Σ⟨Πσₖ,σₖ⟩ + 2⟨η,b⟩
/// ```
///
/// with `η = η_{Θ,Π}`. Equal to [`ergodic_cost`] for every symmetric `Π`.
pub fn cost_representation<T: Real>(
    sys: &LinearSystem<T>,
    w: &CostWeights<T>,
    strat: &Strategy<T>,
    pi: &DMatrix<T>,
) -> Result<T> {
    let moments = stationary_moments(sys, strat)?;
    sys.check_square(pi, "Pi")?;
    let pi = symmetrize(pi);
    let eta = eta_solve(sys, w, &strat.theta, &pi)?;
    let (n, m) = (sys.n(), sys.m());
    let mm = m_theta_pi(sys, w, &strat.theta, &pi);
    let mxx = mm.view((0, 0), (n, n)).into_owned();
    let mvx = mm.view((n, 0), (m, n)).into_owned();
    let mvv = mm.view((n, n), (m, m)).into_owned();
    let v = &strat.v;
    let two = T::lit(2.0);

    let quad = (&mxx * &moments.m2).trace()
        + two * v.dot(&(&mvx * &moments.m1))
        + (v.transpose() * &mvv * v)[0];
    let mut lin_v = sys.b.transpose() * &eta + &w.rho;
    let mut sig = T::zero();
    for (d, s) in sys.d.iter().zip(&sys.sigma) {
        let ps = &pi * s;
        lin_v += d.transpose() * &ps;
        sig += s.dot(&ps);
    }
    Ok(quad + two * lin_v.dot(v) + sig + two * eta.dot(&sys.drift))
}
