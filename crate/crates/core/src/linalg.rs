//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Matrices are `nalgebra` column-major; `vec(X)` therefore stacks columns,
//! which is the convention used by the Kronecker identities
//! `vec(AXB) = (Bᵀ ⊗ A) vec(X)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Real, Result};

/// `(M + Mᵀ)/2`.
pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Frobenius norm.
pub fn fro<T: Real>(m: &DMatrix<T>) -> T {
    m.norm()
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    let mut ev: Vec<T> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

pub fn max_sym_eig<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).last().copied().unwrap_or_else(T::zero)
}

pub fn min_sym_eig<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).first().copied().unwrap_or_else(T::zero)
}

/// Symmetric part with eigenvalues of magnitude `<= abs_tol` set to zero.
pub fn chop_small_eigenvalues<T: Real>(m: &DMatrix<T>, abs_tol: T) -> DMatrix<T> {
    let mut eig = SymmetricEigen::new(symmetrize(m));
    for ev in eig.eigenvalues.iter_mut() {
        if ev.abs() <= abs_tol {
            *ev = T::zero();
        }
    }
    symmetrize(&eig.recompose())
}

/// Largest eigenvalue of the symmetric part and a unit eigenvector for it.
pub fn top_eigenpair<T: Real>(m: &DMatrix<T>) -> (T, DVector<T>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    (eig.eigenvalues[best], eig.eigenvectors.column(best).into_owned())
}

/// Moore–Penrose pseudo-inverse; singular values below `rel_tol·σ_max` are
/// treated as zero.
///
/// Singular triplets are read off the symmetric eigendecomposition of
/// `[[0, M], [Mᵀ, 0]]`, whose eigenpairs are `±σₖ` with `(uₖ; ±vₖ)/√2`.
/// nalgebra's bidiagonal SVD returns non-orthogonal factors for some
/// rank-deficient inputs, while its symmetric eigensolver does not.
pub fn pinv<T: Real>(m: &DMatrix<T>, rel_tol: T) -> DMatrix<T> {
    let (rows, cols) = m.shape();
    let mut out = DMatrix::zeros(cols, rows);
    if rows == 0 || cols == 0 {
        return out;
    }
    let mut jw = DMatrix::zeros(rows + cols, rows + cols);
    jw.view_mut((0, rows), (rows, cols)).copy_from(m);
    jw.view_mut((rows, 0), (cols, rows)).copy_from(&m.transpose());
    let eig = SymmetricEigen::new(jw);
    let smax = eig.eigenvalues.iter().fold(T::zero(), |acc, &s| acc.max(s.abs()));
    if smax <= T::zero() {
        return out;
    }
    let cut = rel_tol * smax;
    for (k, &s) in eig.eigenvalues.iter().enumerate() {
        if s > cut {
            let x = eig.eigenvectors.column(k);
            let u = x.rows(0, rows);
            let v = x.rows(rows, cols);
            out += v * u.transpose() * (T::lit(2.0) / s);
        }
    }
    out
}

/// Solves a square system, reporting numerical singularity.
///
/// Singularity is declared when the smallest pivot of a full-pivot LU is
/// below `n·ε·(largest pivot)`.
pub fn solve_square<T: Real>(
    a: &DMatrix<T>,
    rhs: &DMatrix<T>,
    what: &'static str,
) -> Result<DMatrix<T>> {
    let n = a.nrows();
    if a.ncols() != n || rhs.nrows() != n {
        return Err(Error::Dimension(format!(
            "{what}: {}x{} system with {} right-hand rows",
            a.nrows(),
            a.ncols(),
            rhs.nrows()
        )));
    }
    if n == 0 {
        return Ok(rhs.clone());
    }
    let lu = a.clone().full_piv_lu();
    let u = lu.u();
    let mut pmax = T::zero();
    let mut pmin = T::max_value().unwrap_or_else(|| T::lit(f64::MAX));
    for i in 0..n {
        let p = u[(i, i)].abs();
        pmax = pmax.max(p);
        pmin = pmin.min(p);
    }
    let eps = T::default_epsilon();
    if !(pmax > T::zero()) || pmin <= eps * T::from_usize(n).unwrap() * pmax {
        return Err(Error::SingularLinearSystem(what));
    }
    let x = lu.solve(rhs).ok_or(Error::SingularLinearSystem(what))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularLinearSystem(what));
    }
    Ok(x)
}

pub fn solve_vec<T: Real>(a: &DMatrix<T>, rhs: &DVector<T>, what: &'static str) -> Result<DVector<T>> {
    let b = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    let x = solve_square(a, &b, what)?;
    Ok(DVector::from_column_slice(x.as_slice()))
}

pub fn vec_of<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec<T: Real>(v: &DVector<T>, n: usize) -> DMatrix<T> {
    DMatrix::from_column_slice(n, n, v.as_slice())
}

/// Matrix of `X ↦ AX + XAᵀ + Σ CₖXCₖᵀ` acting on `vec(X)`.
pub fn forward_operator<T: Real>(a: &DMatrix<T>, cs: &[DMatrix<T>]) -> DMatrix<T> {
    let n = a.nrows();
    let eye = DMatrix::<T>::identity(n, n);
    let mut op = eye.kronecker(a) + a.kronecker(&eye);
    for c in cs {
        op += c.kronecker(c);
    }
    op
}

/// Matrix of `P ↦ PA + AᵀP + Σ CₖᵀPCₖ` acting on `vec(P)`.
pub fn adjoint_operator<T: Real>(a: &DMatrix<T>, cs: &[DMatrix<T>]) -> DMatrix<T> {
    let n = a.nrows();
    let eye = DMatrix::<T>::identity(n, n);
    let at = a.transpose();
    let mut op = at.kronecker(&eye) + eye.kronecker(&at);
    for c in cs {
        let ct = c.transpose();
        op += ct.kronecker(&ct);
    }
    op
}

/// Solves `AX + XAᵀ + Σ CₖXCₖᵀ + RHS = 0`.
pub fn solve_forward_lyapunov<T: Real>(
    a: &DMatrix<T>,
    cs: &[DMatrix<T>],
    rhs: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let n = a.nrows();
    let op = forward_operator(a, cs);
    let x = solve_vec(&op, &(-vec_of(rhs)), "stationary second-moment equation")?;
    Ok(symmetrize(&unvec(&x, n)))
}

/// Solves `PA + AᵀP + Σ CₖᵀPCₖ + RHS = 0`.
pub fn solve_adjoint_lyapunov<T: Real>(
    a: &DMatrix<T>,
    cs: &[DMatrix<T>],
    rhs: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let n = a.nrows();
    let op = adjoint_operator(a, cs);
    let x = solve_vec(&op, &(-vec_of(rhs)), "closed-loop Lyapunov equation")?;
    Ok(symmetrize(&unvec(&x, n)))
}

/// Residual of `PA + AᵀP + Σ CₖᵀPCₖ + RHS`.
pub fn adjoint_lyapunov_residual<T: Real>(
    a: &DMatrix<T>,
    cs: &[DMatrix<T>],
    rhs: &DMatrix<T>,
    p: &DMatrix<T>,
) -> DMatrix<T> {
    let mut r = p * a + a.transpose() * p + rhs;
    for c in cs {
        r += c.transpose() * p * c;
    }
    r
}
