//! Closed forms for two scalar problem families.
//!
//! *Drift-only family*: `B = 1`, `D = R = q = ρ = 0`, cost rate `Qx² + 2Sxu`.
//! *Control-noise family*: `D ≠ 0`, classified through `(α, β, γ)`.
//!
//! The rational parts are generic over [`OracleScalar`], so the same code
//! runs in `f64` and in exact `Ratio<i64>`/`Ratio<i128>` arithmetic.
//! Quantities that need a square root use [`OracleScalar::exact_sqrt`],
//! which for rationals succeeds only on perfect squares.

use std::fmt::Debug;

use num_integer::Roots;
use num_rational::Ratio;
use num_traits::{Num, Signed};

use crate::{Error, Real, Result};

/// Scalar usable by the closed-form oracles.
pub trait OracleScalar: Clone + PartialOrd + Num + Signed + Debug {
    /// `x` is zero up to the type's tolerance relative to `scale`.
    fn is_negligible(&self, scale: &Self) -> bool;
    /// Square root if representable in the type.
    fn exact_sqrt(&self) -> Option<Self>;
    fn to_f64(&self) -> f64;
}

macro_rules! float_oracle {
    ($t:ty, $tol:expr) => {
        impl OracleScalar for $t {
            fn is_negligible(&self, scale: &Self) -> bool {
                self.abs() <= $tol * (1.0 + scale.abs())
            }
            fn exact_sqrt(&self) -> Option<Self> {
                (*self >= 0.0).then(|| self.sqrt())
            }
            fn to_f64(&self) -> f64 {
                *self as f64
            }
        }
    };
}

float_oracle!(f64, 1e-9);
float_oracle!(f32, 1e-5);

macro_rules! ratio_oracle {
    ($i:ty) => {
        impl OracleScalar for Ratio<$i> {
            fn is_negligible(&self, _scale: &Self) -> bool {
                *self.numer() == 0
            }
            fn exact_sqrt(&self) -> Option<Self> {
                let (n, d) = (*self.numer(), *self.denom());
                if n < 0 {
                    return None;
                }
                let (rn, rd) = (n.sqrt(), d.sqrt());
                (rn * rn == n && rd * rd == d).then(|| Ratio::new(rn, rd))
            }
            fn to_f64(&self) -> f64 {
                *self.numer() as f64 / *self.denom() as f64
            }
        }
    };
}

ratio_oracle!(i64);
ratio_oracle!(i128);

fn two<S: OracleScalar>() -> S {
    S::one() + S::one()
}

fn sgn_tie_up<S: OracleScalar>(x: &S) -> S {
    if x.is_negative() {
        -S::one()
    } else {
        S::one()
    }
}

/// Tri-state answer of a classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Yes,
    No,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseLabel {
    I,
    II,
    III,
}

impl std::fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CaseLabel::I => "I",
            CaseLabel::II => "II",
            CaseLabel::III => "III",
        })
    }
}

/// Verdict of a scalar classification. `solvable == Yes` implies
/// `finite == Yes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict1D<S> {
    /// `None` when no case applies.
    pub case: Option<CaseLabel>,
    pub finite: Answer,
    pub solvable: Answer,
    pub description: String,
    /// Optimal value (or infimum) when known in closed form.
    pub value: Option<S>,
}

/// Data of the drift-only family.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftOnly<S> {
    pub a: S,
    pub c: S,
    pub b: S,
    pub sigma: S,
    pub q: S,
    pub s: S,
}

impl<S: OracleScalar> DriftOnly<S> {
    /// `S(2A + C²)`.
    pub fn s1(&self) -> S {
        self.s.clone() * (two::<S>() * self.a.clone() + self.c.clone() * self.c.clone())
    }

    /// `CSb + (Q − 2AS)σ`.
    pub fn s2(&self) -> S {
        self.c.clone() * self.s.clone() * self.b.clone()
            + (self.q.clone() - two::<S>() * self.a.clone() * self.s.clone()) * self.sigma.clone()
    }

    /// `ᾱ = Q − S(2A + C²)`.
    pub fn alpha_bar(&self) -> S {
        self.q.clone() - self.s1()
    }

    /// `β̄ = (2A + C²)/2`.
    pub fn beta_bar(&self) -> S {
        (two::<S>() * self.a.clone() + self.c.clone() * self.c.clone()) / two::<S>()
    }

    fn scale(&self) -> S {
        self.a.abs() + self.c.abs() + self.b.abs() + self.sigma.abs() + self.q.abs() + self.s.abs()
    }

    fn admissible(&self, theta: &S) -> bool {
        (two::<S>() * (self.a.clone() + theta.clone()) + self.c.clone() * self.c.clone()).is_negative()
    }
}

/// Classifies the drift-only family into the cases `S(2A+C²) <, =, > Q`.
///
/// For `S(2A+C²) = Q` the cost is affine in `v` with slope proportional to
/// `S(b + Cσ)`, which therefore decides finiteness.
pub fn classify_drift_only<S: OracleScalar>(p: &DriftOnly<S>) -> Verdict1D<S> {
    let (s1, q) = (p.s1(), p.q.clone());
    let scale = p.scale();
    let diff = q.clone() - s1.clone();
    if diff.is_negligible(&scale) {
        let slope = p.s.clone() * (p.b.clone() + p.c.clone() * p.sigma.clone());
        if slope.is_negligible(&scale) {
            Verdict1D {
                case: Some(CaseLabel::II),
                finite: Answer::Yes,
                solvable: Answer::Yes,
                description: "every admissible (Theta, v) is optimal".into(),
                value: Some(-(p.s.clone() * p.sigma.clone() * p.sigma.clone())),
            }
        } else {
            Verdict1D {
                case: Some(CaseLabel::II),
                finite: Answer::No,
                solvable: Answer::No,
                description: "cost is affine and unbounded below in v".into(),
                value: None,
            }
        }
    } else if diff.is_positive() {
        let value = Some(h_inf_unchecked(p));
        if p.s2().is_negligible(&scale) {
            Verdict1D {
                case: Some(CaseLabel::I),
                finite: Answer::Yes,
                solvable: Answer::Yes,
                description: "(Theta, v_Theta) is optimal for every admissible Theta".into(),
                value,
            }
        } else {
            Verdict1D {
                case: Some(CaseLabel::I),
                finite: Answer::Yes,
                solvable: Answer::No,
                description: "infimum approached only as Theta -> -infinity".into(),
                value,
            }
        }
    } else {
        Verdict1D {
            case: Some(CaseLabel::III),
            finite: Answer::No,
            solvable: Answer::No,
            description: "cost is concave in v".into(),
            value: None,
        }
    }
}

/// Stationary `(m₁, m₂)` under `u = Θx + v`.
pub fn moments_drift_only<S: OracleScalar>(p: &DriftOnly<S>, theta: &S, v: &S) -> Result<(S, S)> {
    if !p.admissible(theta) {
        return Err(Error::InvalidArgument("Theta is not admissible: need 2(A+Theta)+C^2 < 0".into()));
    }
    let t = two::<S>();
    let at = p.a.clone() + theta.clone();
    let k = t.clone() * at.clone() + p.c.clone() * p.c.clone();
    let bv = p.b.clone() + v.clone();
    let m1 = -(bv.clone() / at.clone());
    let m2 = t.clone() * bv.clone() * bv.clone() / (k.clone() * at.clone())
        - p.sigma.clone() * p.sigma.clone() / k.clone()
        + t * p.c.clone() * p.sigma.clone() * bv / (at * k);
    Ok((m1, m2))
}

/// `E(Θ, v) = (Q + 2SΘ)m₂ + 2Sv·m₁`.
pub fn cost_drift_only<S: OracleScalar>(p: &DriftOnly<S>, theta: &S, v: &S) -> Result<S> {
    let (m1, m2) = moments_drift_only(p, theta, v)?;
    Ok((p.q.clone() + two::<S>() * p.s.clone() * theta.clone()) * m2 + two::<S>() * p.s.clone() * v.clone() * m1)
}

fn require_case_one<S: OracleScalar>(p: &DriftOnly<S>) -> Result<()> {
    if !p.alpha_bar().is_positive() {
        return Err(Error::InvalidArgument("requires Q > S(2A+C^2)".into()));
    }
    Ok(())
}

/// Minimizer of `v ↦ E(Θ, v)`:
/// `v* = −b − (2(A+Θ)+C²)/(2ᾱ)·(Sb + (Q+2SΘ)Cσ/(2(A+Θ)+C²))`.
pub fn v_minimizer_drift_only<S: OracleScalar>(p: &DriftOnly<S>, theta: &S) -> Result<S> {
    Ok(v_theta_expression(p, theta)? - p.b.clone())
}

/// The expression without the `−b` shift; it equals `b + v*`.
pub fn v_theta_expression<S: OracleScalar>(p: &DriftOnly<S>, theta: &S) -> Result<S> {
    require_case_one(p)?;
    if !p.admissible(theta) {
        return Err(Error::InvalidArgument("Theta is not admissible".into()));
    }
    let t = two::<S>();
    let k = t.clone() * (p.a.clone() + theta.clone()) + p.c.clone() * p.c.clone();
    let inner = p.s.clone() * p.b.clone()
        + (p.q.clone() + t.clone() * p.s.clone() * theta.clone()) * p.c.clone() * p.sigma.clone() / k.clone();
    Ok(-(k / (t * p.alpha_bar())) * inner)
}

/// `h(Θ) = min_v E(Θ, v)`.
pub fn h_drift_only<S: OracleScalar>(p: &DriftOnly<S>, theta: &S) -> Result<S> {
    let v = v_minimizer_drift_only(p, theta)?;
    cost_drift_only(p, theta, &v)
}

fn h_inf_unchecked<S: OracleScalar>(p: &DriftOnly<S>) -> S {
    let bc = p.b.clone() + p.c.clone() * p.sigma.clone();
    -(p.s.clone() * p.s.clone() * bc.clone() * bc / p.alpha_bar()) - p.s.clone() * p.sigma.clone() * p.sigma.clone()
}

/// `h(−∞) = −S²(b+Cσ)²/(Q − S(2A+C²)) − Sσ²`.
pub fn h_inf_drift_only<S: OracleScalar>(p: &DriftOnly<S>) -> Result<S> {
    require_case_one(p)?;
    Ok(h_inf_unchecked(p))
}

/// Closed-form solution of the regularized the drift-only family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedClosedForm<T> {
    pub p: T,
    pub theta: T,
    pub eta: T,
    pub v: T,
    pub value: T,
}

/// Stabilizing root of `(2A+C²)P + Q − δ⁻¹(P+S)² = 0` and the induced
/// strategy and value of the problem with `R = δ`.
pub fn regularized_closed_form_drift_only<T: Real>(p: &DriftOnly<T>, delta: T) -> Result<RegularizedClosedForm<T>>
where
    T: OracleScalar,
{
    let alpha = p.alpha_bar();
    let beta = p.beta_bar();
    if alpha < T::zero() {
        return Err(Error::InvalidArgument("requires Q >= S(2A+C^2)".into()));
    }
    if !(delta > T::zero()) {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    let pp = -p.s + delta * beta + (delta * alpha + delta * delta * beta * beta).sqrt();
    let root = (alpha / delta + beta * beta).sqrt();
    let theta = -beta - root;
    let at = p.a - beta - root;
    let bc = p.b + p.c * p.sigma;
    let eta = -(pp * bc) / at;
    let v = pp * bc / (at * delta);
    let value = pp * p.sigma * p.sigma + T::lit(2.0) * p.b * eta - delta * v * v;
    Ok(RegularizedClosedForm { p: pp, theta, eta, v, value })
}

/// Data of the control-noise family (`n = m = d = 1`, `D ≠ 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlNoise<S> {
    pub a: S,
    pub b: S,
    pub c: S,
    pub d: S,
    pub q: S,
    pub s: S,
    pub r: S,
    pub drift: S,
    pub sigma: S,
    pub q_lin: S,
    pub rho: S,
}

impl<S: OracleScalar> ControlNoise<S> {
    /// Homogeneous data with zero linear weights.
    pub fn new(a: S, b: S, c: S, d: S, q: S, s: S, r: S) -> Self {
        Self { a, b, c, d, q, s, r, drift: S::zero(), sigma: S::zero(), q_lin: S::zero(), rho: S::zero() }
    }

    fn bcd(&self) -> S {
        self.b.clone() + self.c.clone() * self.d.clone()
    }

    fn d2(&self) -> S {
        self.d.clone() * self.d.clone()
    }

    /// `S − D⁻²R(B+CD)`.
    fn tilt(&self) -> S {
        self.s.clone() - self.r.clone() * self.bcd() / self.d2()
    }

    fn scale(&self) -> S {
        [&self.a, &self.b, &self.c, &self.d, &self.q, &self.s, &self.r, &self.drift, &self.sigma, &self.q_lin, &self.rho]
            .iter()
            .fold(S::zero(), |acc, x| acc + x.abs())
    }
}

fn require_d<S: OracleScalar>(p: &ControlNoise<S>) -> Result<()> {
    if p.d.is_zero() {
        return Err(Error::InvalidArgument("requires D != 0".into()));
    }
    Ok(())
}

/// `α = D⁻²(B+CD)² − (2A+C²)`,
/// `β = Q − D⁻²(2A+C²)R − 2D⁻²[S − D⁻²R(B+CD)](B+CD)`,
/// `γ = D⁻²[D⁻²R(B+CD) − S]²`.
pub fn abg_control_noise<S: OracleScalar>(p: &ControlNoise<S>) -> Result<(S, S, S)> {
    require_d(p)?;
    let t = two::<S>();
    let d2 = p.d2();
    let k = t.clone() * p.a.clone() + p.c.clone() * p.c.clone();
    let alpha = p.bcd() * p.bcd() / d2.clone() - k.clone();
    let beta = p.q.clone() - k * p.r.clone() / d2.clone() - t * p.tilt() * p.bcd() / d2.clone();
    let gamma = p.tilt() * p.tilt() / d2;
    Ok((alpha, beta, gamma))
}

/// `|D²Θ + (B+CD)| < √α·|D|`, evaluated exactly as
/// `(D²Θ + B + CD)² < α·D²`.
pub fn is_admissible_control_noise<S: OracleScalar>(p: &ControlNoise<S>, theta: &S) -> Result<bool> {
    let (alpha, _, _) = abg_control_noise(p)?;
    let lhs = p.d2() * theta.clone() + p.bcd();
    Ok(lhs.clone() * lhs < alpha * p.d2())
}

/// Boundary feedback `Θ*` of the control-noise family.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaStar<S> {
    pub theta: S,
    /// `S − D⁻²R(B+CD) = 0`, where `sgn(0) = +1` was used.
    pub sign_tie: bool,
}

/// `Θ* = −D⁻²(B+CD) − |D|⁻¹√α·sgn(S − D⁻²R(B+CD))`; it satisfies
/// `|D²Θ* + (B+CD)| = √α|D|`.
pub fn theta_star_control_noise<S: OracleScalar>(p: &ControlNoise<S>) -> Result<ThetaStar<S>> {
    let (alpha, _, _) = abg_control_noise(p)?;
    if !alpha.is_positive() {
        return Err(Error::InvalidArgument("requires alpha > 0".into()));
    }
    let sa = alpha
        .exact_sqrt()
        .ok_or_else(|| Error::InvalidArgument("sqrt(alpha) is not representable in this scalar type".into()))?;
    let tilt = p.tilt();
    let theta = -(p.bcd() / p.d2()) - sa / p.d.abs() * sgn_tie_up(&tilt);
    Ok(ThetaStar { theta, sign_tie: tilt.is_zero() })
}

/// Classifies the control-noise family by the three certificate rows.
///
/// - I: `β − 2√(αγ) > 0`, decided exactly as `β > 0 ∧ β² > 4αγ`.
/// - II: `β = γ = 0` and some `η₀` solves
///   `Bη₀ − D⁻¹Rσ + ρ = 0`, `Aη₀ + q − D⁻²R(b+Cσ) = 0`.
/// - III: `γ ≠ 0`, `β = 2√(αγ)`, and
///   `q + Θ*ρ + [b + (C+DΘ*)σ](√(γ/α) − D⁻²R) ∈ ℛ(A + BΘ*)`.
///
/// Outside the rows the answer is unknown.
pub fn classify_control_noise<S: OracleScalar>(p: &ControlNoise<S>) -> Result<Verdict1D<S>> {
    let (alpha, beta, gamma) = abg_control_noise(p)?;
    if !alpha.is_positive() {
        return Err(Error::InvalidArgument("requires alpha > 0 (no stabilizer otherwise)".into()));
    }
    let scale = p.scale();
    let four = two::<S>() * two::<S>();
    let disc = beta.clone() * beta.clone() - four * alpha.clone() * gamma.clone();
    let solvable = |case, description: &str| Verdict1D {
        case: Some(case),
        finite: Answer::Yes,
        solvable: Answer::Yes,
        description: description.into(),
        value: None,
    };
    if beta.is_positive() && disc.is_positive() && !disc.is_negligible(&(beta.clone() * beta.clone())) {
        return Ok(solvable(CaseLabel::I, "beta - 2 sqrt(alpha gamma) > 0"));
    }
    let d2 = p.d2();
    if beta.is_negligible(&scale) && gamma.is_negligible(&scale) {
        let e1 = -(p.r.clone() * p.sigma.clone() / p.d.clone()) + p.rho.clone();
        let e2 = p.q_lin.clone() - p.r.clone() * (p.drift.clone() + p.c.clone() * p.sigma.clone()) / d2.clone();
        let exists = if !p.b.is_negligible(&scale) {
            let eta = -(e1 / p.b.clone());
            (p.a.clone() * eta + e2).is_negligible(&scale)
        } else {
            e1.is_negligible(&scale) && (!p.a.is_negligible(&scale) || e2.is_negligible(&scale))
        };
        if exists {
            return Ok(solvable(CaseLabel::II, "beta = gamma = 0 and the eta equations are consistent"));
        }
    }
    if !gamma.is_negligible(&scale) && beta.is_positive() && disc.is_negligible(&(beta.clone() * beta.clone())) {
        let unknown = |why: &str| Verdict1D {
            case: Some(CaseLabel::III),
            finite: Answer::Unknown,
            solvable: Answer::Unknown,
            description: why.into(),
            value: None,
        };
        let Some(root) = (gamma.clone() / alpha.clone()).exact_sqrt() else {
            return Ok(unknown("sqrt(gamma/alpha) not representable; range condition not evaluated"));
        };
        let Ok(ts) = theta_star_control_noise(p) else {
            return Ok(unknown("sqrt(alpha) not representable; range condition not evaluated"));
        };
        let th = ts.theta;
        let pstar = root - p.r.clone() / d2;
        let expr = p.q_lin.clone()
            + th.clone() * p.rho.clone()
            + (p.drift.clone() + (p.c.clone() + p.d.clone() * th.clone()) * p.sigma.clone()) * pstar;
        let a_cl = p.a.clone() + p.b.clone() * th;
        if !a_cl.is_negligible(&scale) || expr.is_negligible(&scale) {
            return Ok(Verdict1D {
                case: Some(CaseLabel::III),
                finite: Answer::Yes,
                solvable: Answer::Unknown,
                description: "beta = 2 sqrt(alpha gamma) with the range condition at Theta*".into(),
                value: None,
            });
        }
    }
    Ok(Verdict1D {
        case: None,
        finite: Answer::Unknown,
        solvable: Answer::Unknown,
        description: "no certificate row applies".into(),
        value: None,
    })
}
