use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("{0} is not symmetric")]
    NotSymmetric(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("feedback gain is not a mean-square stabilizer")]
    NotStabilizing,
    #[error("no stabilizer found after {iterations} iterations (best max eigenvalue of F = {best_max_eig:e})")]
    StabilizerNotFound { iterations: usize, best_max_eig: f64 },
    #[error("singular linear system in {0}")]
    SingularLinearSystem(&'static str),
    #[error("range condition violated (defect {defect:e})")]
    RangeViolation { defect: f64 },
    #[error("R + D'PD lost positive definiteness at iteration {iteration} (min eigenvalue {min_eig:e})")]
    LostPositivity { iteration: usize, min_eig: f64 },
    #[error("updated feedback is not a stabilizer at iteration {iteration}")]
    LostStability { iteration: usize },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("cost block [[Q, S'], [S, R]] is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { min_eig: f64 },
    #[error("regularized values diverge (last value {last_value:e} at delta {last_delta:e})")]
    Diverging { last_value: f64, last_delta: f64 },
    #[error("numerical blow-up in simulation at t = {t}")]
    NumericalBlowup { t: f64 },
}
