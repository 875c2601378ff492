//! Controlled linear SDE, quadratic running cost and affine feedback.
//!
//! The state equation is
//!
//! ```text
//! dX = (A X + B u + b) dt + Σₖ (Cₖ X + Dₖ u + σₖ) dWₖ,   k = 1..d
//! ```
//!
//! with running cost `g(x,u) = ⟨Qx,x⟩ + 2⟨Sx,u⟩ + ⟨Ru,u⟩ + 2⟨q,x⟩ + 2⟨ρ,u⟩`.
//! A feedback gain `Θ` is a *stabilizer* when
//! `F(Θ) = (A+BΘ) + (A+BΘ)ᵀ + Σₖ (Cₖ+DₖΘ)ᵀ(Cₖ+DₖΘ)` is negative definite.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{fro, max_sym_eig, symmetrize, top_eigenpair};
use crate::{Error, Real, Result};

/// Default relative tolerance of the stabilizer test.
pub const TOL_STAB: f64 = 1e-10;

/// Coefficients `A, B, {Cₖ}, {Dₖ}, b, {σₖ}` of the controlled SDE.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: Vec<DMatrix<T>>,
    pub d: Vec<DMatrix<T>>,
    /// Constant drift `b`.
    pub drift: DVector<T>,
    /// Constant diffusion `σₖ`, one per noise channel.
    pub sigma: Vec<DVector<T>>,
}

fn check_shape<T: Real>(m: &DMatrix<T>, rows: usize, cols: usize, name: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_len<T: Real>(v: &DVector<T>, len: usize, name: &str) -> Result<()> {
    if v.len() != len {
        return Err(Error::Dimension(format!("{name} has length {}, expected {len}", v.len())));
    }
    Ok(())
}

fn check_finite<'a, T: Real>(
    mut it: impl Iterator<Item = &'a T>,
    name: &'static str,
) -> Result<()> {
    if it.any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(name));
    }
    Ok(())
}

fn check_symmetric<T: Real>(m: &DMatrix<T>, name: &'static str) -> Result<DMatrix<T>> {
    let asym = fro(&(m - m.transpose()));
    if asym > T::lit(1e-12) * (T::one() + fro(m)) {
        return Err(Error::NotSymmetric(name));
    }
    Ok(symmetrize(m))
}

impl<T: Real> LinearSystem<T> {
    pub fn new(
        a: DMatrix<T>,
        b: DMatrix<T>,
        c: Vec<DMatrix<T>>,
        d: Vec<DMatrix<T>>,
        drift: DVector<T>,
        sigma: Vec<DVector<T>>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if n == 0 || m == 0 {
            return Err(Error::Dimension("n and m must be at least 1".into()));
        }
        if c.is_empty() || c.len() != d.len() || c.len() != sigma.len() {
            return Err(Error::Dimension(format!(
                "noise channel lists must have equal positive length (C: {}, D: {}, sigma: {})",
                c.len(),
                d.len(),
                sigma.len()
            )));
        }
        check_shape(&a, n, n, "A")?;
        check_shape(&b, n, m, "B")?;
        for (k, (ck, dk)) in c.iter().zip(&d).enumerate() {
            check_shape(ck, n, n, &format!("C[{k}]"))?;
            check_shape(dk, n, m, &format!("D[{k}]"))?;
        }
        check_len(&drift, n, "b")?;
        for (k, s) in sigma.iter().enumerate() {
            check_len(s, n, &format!("sigma[{k}]"))?;
        }
        check_finite(a.iter(), "A")?;
        check_finite(b.iter(), "B")?;
        check_finite(c.iter().flat_map(|x| x.iter()), "C")?;
        check_finite(d.iter().flat_map(|x| x.iter()), "D")?;
        check_finite(drift.iter(), "b")?;
        check_finite(sigma.iter().flat_map(|x| x.iter()), "sigma")?;
        Ok(Self { a, b, c, d, drift, sigma })
    }

    /// Single-channel convenience constructor.
    pub fn single(
        a: DMatrix<T>,
        b: DMatrix<T>,
        c: DMatrix<T>,
        d: DMatrix<T>,
        drift: DVector<T>,
        sigma: DVector<T>,
    ) -> Result<Self> {
        Self::new(a, b, vec![c], vec![d], drift, vec![sigma])
    }

    /// Scalar system with one noise channel.
    pub fn scalar(a: T, b: T, c: T, d: T, drift: T, sigma: T) -> Self {
        let s = |x| DMatrix::from_element(1, 1, x);
        let v = |x| DVector::from_element(1, x);
        Self::single(s(a), s(b), s(c), s(d), v(drift), v(sigma)).expect("scalar system is consistent")
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn channels(&self) -> usize {
        self.c.len()
    }

    /// Same coefficients with `b = 0` and `σₖ = 0`.
    pub fn homogeneous(&self) -> Self {
        let mut out = self.clone();
        out.drift.fill(T::zero());
        for s in &mut out.sigma {
            s.fill(T::zero());
        }
        out
    }

    pub(crate) fn check_gain(&self, theta: &DMatrix<T>) -> Result<()> {
        check_shape(theta, self.m(), self.n(), "Theta")
    }

    pub(crate) fn check_square(&self, p: &DMatrix<T>, name: &str) -> Result<()> {
        check_shape(p, self.n(), self.n(), name)
    }
}

/// Quadratic cost data `Q, S, R, q, ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights<T: Real> {
    pub q: DMatrix<T>,
    pub s: DMatrix<T>,
    pub r: DMatrix<T>,
    /// Linear state weight `q`.
    pub q_lin: DVector<T>,
    /// Linear control weight `ρ`.
    pub rho: DVector<T>,
}

impl<T: Real> CostWeights<T> {
    /// Validates shapes against `n`, `m`; `Q` and `R` are symmetrized.
    pub fn new(
        n: usize,
        m: usize,
        q: DMatrix<T>,
        s: DMatrix<T>,
        r: DMatrix<T>,
        q_lin: DVector<T>,
        rho: DVector<T>,
    ) -> Result<Self> {
        check_shape(&q, n, n, "Q")?;
        check_shape(&s, m, n, "S")?;
        check_shape(&r, m, m, "R")?;
        check_len(&q_lin, n, "q")?;
        check_len(&rho, m, "rho")?;
        check_finite(q.iter(), "Q")?;
        check_finite(s.iter(), "S")?;
        check_finite(r.iter(), "R")?;
        check_finite(q_lin.iter(), "q")?;
        check_finite(rho.iter(), "rho")?;
        let q = check_symmetric(&q, "Q")?;
        let r = check_symmetric(&r, "R")?;
        Ok(Self { q, s, r, q_lin, rho })
    }

    pub fn scalar(q: T, s: T, r: T, q_lin: T, rho: T) -> Self {
        let m = |x| DMatrix::from_element(1, 1, x);
        let v = |x| DVector::from_element(1, x);
        Self::new(1, 1, m(q), m(s), m(r), v(q_lin), v(rho)).expect("scalar weights are consistent")
    }

    /// Weights with `R` replaced by `R + δI`.
    pub fn regularized(&self, delta: T) -> Self {
        let mut out = self.clone();
        let m = out.r.nrows();
        out.r += DMatrix::identity(m, m) * delta;
        out
    }

    /// The block `[[Q, Sᵀ], [S, R]]`.
    pub fn block(&self) -> DMatrix<T> {
        let n = self.q.nrows();
        let m = self.r.nrows();
        let mut out = DMatrix::zeros(n + m, n + m);
        out.view_mut((0, 0), (n, n)).copy_from(&self.q);
        out.view_mut((0, n), (n, m)).copy_from(&self.s.transpose());
        out.view_mut((n, 0), (m, n)).copy_from(&self.s);
        out.view_mut((n, n), (m, m)).copy_from(&self.r);
        out
    }

    /// `g(x, u)`.
    pub fn running_cost(&self, x: &DVector<T>, u: &DVector<T>) -> T {
        let two = T::lit(2.0);
        (x.transpose() * &self.q * x)[0]
            + two * (u.transpose() * &self.s * x)[0]
            + (u.transpose() * &self.r * u)[0]
            + two * self.q_lin.dot(x)
            + two * self.rho.dot(u)
    }
}

/// Affine feedback `u(x) = Θx + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy<T: Real> {
    pub theta: DMatrix<T>,
    pub v: DVector<T>,
}

impl<T: Real> Strategy<T> {
    pub fn new(theta: DMatrix<T>, v: DVector<T>) -> Self {
        Self { theta, v }
    }

    pub fn scalar(theta: T, v: T) -> Self {
        Self::new(DMatrix::from_element(1, 1, theta), DVector::from_element(1, v))
    }

    pub fn control(&self, x: &DVector<T>) -> DVector<T> {
        &self.theta * x + &self.v
    }

    pub(crate) fn check(&self, sys: &LinearSystem<T>) -> Result<()> {
        sys.check_gain(&self.theta)?;
        check_len(&self.v, sys.m(), "v")
    }
}

/// Coefficients of the closed-loop SDE under `u = Θx + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop<T: Real> {
    /// `A + BΘ`.
    pub a_cl: DMatrix<T>,
    /// `Cₖ + DₖΘ`.
    pub c_cl: Vec<DMatrix<T>>,
    /// `Bv + b`.
    pub drift_const: DVector<T>,
    /// `Dₖv + σₖ`.
    pub diff_const: Vec<DVector<T>>,
}

impl<T: Real> ClosedLoop<T> {
    pub fn new(sys: &LinearSystem<T>, strat: &Strategy<T>) -> Result<Self> {
        strat.check(sys)?;
        let (a_cl, c_cl) = closed_loop_gains(sys, &strat.theta);
        let drift_const = &sys.b * &strat.v + &sys.drift;
        let diff_const = sys.d.iter().zip(&sys.sigma).map(|(d, s)| d * &strat.v + s).collect();
        Ok(Self { a_cl, c_cl, drift_const, diff_const })
    }
}

pub(crate) fn closed_loop_gains<T: Real>(
    sys: &LinearSystem<T>,
    theta: &DMatrix<T>,
) -> (DMatrix<T>, Vec<DMatrix<T>>) {
    let a_cl = &sys.a + &sys.b * theta;
    let c_cl = sys.c.iter().zip(&sys.d).map(|(c, d)| c + d * theta).collect();
    (a_cl, c_cl)
}

/// `F(Θ) = (A+BΘ) + (A+BΘ)ᵀ + Σₖ (Cₖ+DₖΘ)ᵀ(Cₖ+DₖΘ)`, symmetrized.
pub fn f_of_theta<T: Real>(sys: &LinearSystem<T>, theta: &DMatrix<T>) -> Result<DMatrix<T>> {
    sys.check_gain(theta)?;
    Ok(f_unchecked(sys, theta))
}

fn f_unchecked<T: Real>(sys: &LinearSystem<T>, theta: &DMatrix<T>) -> DMatrix<T> {
    let (a_cl, c_cl) = closed_loop_gains(sys, theta);
    let mut f = &a_cl + a_cl.transpose();
    for c in &c_cl {
        f += c.transpose() * c;
    }
    symmetrize(&f)
}

/// `λ(Θ) = −λ_max(F(Θ))`; positive iff `F(Θ) ≺ 0`.
pub fn lambda_of_theta<T: Real>(sys: &LinearSystem<T>, theta: &DMatrix<T>) -> Result<T> {
    Ok(-max_sym_eig(&f_of_theta(sys, theta)?))
}

/// Stabilizer test with the default tolerance.
pub fn is_stabilizer<T: Real>(sys: &LinearSystem<T>, theta: &DMatrix<T>) -> bool {
    is_stabilizer_tol(sys, theta, T::lit(TOL_STAB))
}

/// `λ_max(F(Θ)) < −tol·(1 + ‖F(Θ)‖)`. Shape mismatches are not stabilizers.
pub fn is_stabilizer_tol<T: Real>(sys: &LinearSystem<T>, theta: &DMatrix<T>, tol: T) -> bool {
    match f_of_theta(sys, theta) {
        Ok(f) => {
            let lmax = max_sym_eig(&f);
            lmax.is_finite() && lmax < -tol * (T::one() + fro(&f))
        }
        Err(_) => false,
    }
}

/// Subgradient search options for [`find_stabilizer`].
#[derive(Debug, Clone, Copy)]
pub struct StabilizerSearch {
    /// Total iteration budget across restarts.
    pub max_iters: usize,
    pub restarts: usize,
    /// Step scale of the first restart; doubled on every restart.
    pub initial_scale: f64,
    pub tol_stab: f64,
}

impl Default for StabilizerSearch {
    fn default() -> Self {
        Self { max_iters: 500, restarts: 5, initial_scale: 1.0, tol_stab: TOL_STAB }
    }
}

/// Finds some `Θ` with `F(Θ) ≺ 0` with default options.
pub fn find_stabilizer<T: Real>(sys: &LinearSystem<T>) -> Result<DMatrix<T>> {
    find_stabilizer_with(sys, &StabilizerSearch::default())
}

/// Minimizes the convex map `Θ ↦ λ_max(F(Θ))` by normalized subgradient
/// steps `scale/(1+k)` from `Θ = 0`, restarting with doubled scale.
///
/// `StabilizerNotFound` only means the search failed, not that no
/// stabilizer exists.
pub fn find_stabilizer_with<T: Real>(
    sys: &LinearSystem<T>,
    opts: &StabilizerSearch,
) -> Result<DMatrix<T>> {
    let (n, m) = (sys.n(), sys.m());
    let tol = T::lit(opts.tol_stab);
    let restarts = opts.restarts.max(1);
    let per_restart = (opts.max_iters / restarts).max(1);
    let two = T::lit(2.0);
    let mut best = T::max_value().unwrap_or_else(|| T::lit(f64::MAX));
    let mut scale = T::lit(opts.initial_scale);
    let mut used = 0;

    for _ in 0..restarts {
        let mut theta = DMatrix::<T>::zeros(m, n);
        for k in 0..per_restart {
            used += 1;
            let f = f_unchecked(sys, &theta);
            let (lmax, u) = top_eigenpair(&f);
            best = best.min(lmax);
            if lmax < -tol * (T::one() + fro(&f)) {
                return Ok(theta);
            }
            // ∂/∂Θ uᵀF(Θ)u = 2Bᵀuuᵀ + 2Σₖ Dₖᵀ(Cₖ+DₖΘ)uuᵀ
            let mut w = &sys.b.transpose() * &u;
            for (c, d) in sys.c.iter().zip(&sys.d) {
                w += d.transpose() * ((c + d * &theta) * &u);
            }
            let grad = (&w * u.transpose()) * two;
            let gnorm = grad.norm();
            if !(gnorm > T::default_epsilon()) {
                break;
            }
            let step = scale / T::from_usize(k + 1).unwrap();
            theta -= grad * (step / gnorm);
        }
        scale *= two;
    }
    Err(Error::StabilizerNotFound { iterations: used, best_max_eig: best.as_f64() })
}
