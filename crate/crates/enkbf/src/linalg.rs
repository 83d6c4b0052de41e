//! Small dense symmetric helpers shared by the filters.
//!
//! Everything here operates on the low-dimensional covariance blocks of the
//! filters (d x d, p x p), so eigendecompositions are cheap and preferred over
//! anything iterative.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};

/// Relative tolerance used when checking symmetry of declared covariances.
pub const SYM_TOL: f64 = 1e-10;

/// Eigenvalues within this distance of zero are clamped when taking roots.
pub const EIG_CLAMP: f64 = 1e-12;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Operator (spectral) norm of a symmetric matrix.
pub fn sym_operator_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs()))
}

/// Operator norm of a general matrix (largest singular value).
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.transpose() * m;
    sym_operator_norm(&gram).max(0.0).sqrt()
}

/// Symmetric square root via eigendecomposition.
///
/// Eigenvalues within [`EIG_CLAMP`] of zero are clamped to zero; genuinely
/// negative eigenvalues are rejected.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_symmetric(m, SYM_TOL) {
        return Err(Error::Config("matrix is not symmetric".into()));
    }
    let eig = m.clone().symmetric_eigen();
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -EIG_CLAMP {
            return Err(Error::Config(format!(
                "matrix has negative eigenvalue {v:.3e}, no real square root"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let d = DMatrix::from_diagonal(&roots);
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Inverse of a symmetric matrix via eigendecomposition, refusing to invert
/// when the smallest eigenvalue sits below `floor`.
pub fn sym_inverse_floored(m: &DMatrix<f64>, floor: f64, step: usize) -> Result<DMatrix<f64>> {
    if !is_symmetric(m, SYM_TOL) {
        return Err(Error::Config("matrix is not symmetric".into()));
    }
    let eig = m.clone().symmetric_eigen();
    let lambda_min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if lambda_min < floor {
        return Err(Error::Collapse {
            step,
            lambda_min,
            floor,
        });
    }
    let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    Ok(&eig.eigenvectors * inv * eig.eigenvectors.transpose())
}

/// Solve `X * S = B` for symmetric positive definite `S` via Cholesky.
///
/// This is the gain solve: the explicit inverse in the gain formula is never
/// formed.
pub fn solve_spd_right(s: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(s.clone())
        .ok_or_else(|| Error::Rank("innovation matrix is not positive definite".into()))?;
    // X S = B  <=>  S X^T = B^T (S symmetric)
    Ok(chol.solve(&b.transpose()).transpose())
}
