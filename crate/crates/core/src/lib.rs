//! Ergodic control of linear stochastic differential equations with
//! quadratic, possibly indefinite, running cost.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: system/cost/strategy data and the mean-square stability test.
//! - [`stationary`]: invariant-measure moments and the ergodic cost `E(Θ, v)`.
//! - [`riccati`]: pseudo-inverses, Riccati residuals, Newton–Kleinman and the
//!   finiteness/solvability certificates.
//! - [`ergodic`]: complete solvers (positive-definite path, certificate path,
//!   `δ`-regularization).
//! - [`simulate`]: Euler–Maruyama Monte-Carlo estimators used as an oracle.
//! - [`analytic1d`]: closed forms for the two scalar problem families.
//!
//! All numerical code is generic over [`Real`] (`f32`/`f64`); the scalar
//! oracles in [`analytic1d`] are additionally generic over exact rationals.

pub mod analytic1d;
pub mod ergodic;
pub mod error;
pub mod linalg;
pub mod model;
pub mod riccati;
pub mod simulate;
pub mod stationary;

mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub use nalgebra::{DMatrix, DVector};

/// Double-precision system.
pub type LinearSystemF64 = model::LinearSystem<f64>;
/// Double-precision cost weights.
pub type CostWeightsF64 = model::CostWeights<f64>;
/// Double-precision feedback strategy.
pub type StrategyF64 = model::Strategy<f64>;
/// Single-precision system.
pub type LinearSystemF32 = model::LinearSystem<f32>;
/// Single-precision cost weights.
pub type CostWeightsF32 = model::CostWeights<f32>;
/// Single-precision feedback strategy.
pub type StrategyF32 = model::Strategy<f32>;
/// Exact rational scalar for the closed-form oracles.
pub type Rational = num_rational::Ratio<i64>;
/// Wide exact rational scalar for the closed-form oracles.
pub type Rational128 = num_rational::Ratio<i128>;
