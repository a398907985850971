//! Dense helpers: the matrix exponential and SPD solves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{BridgeError, Result};

/// `exp(a * t)`; nalgebra's scaling-and-squaring Padé, behind input checks.
pub fn mat_exp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(BridgeError::invalid(format!(
            "matrix exponential of non-square {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if !t.is_finite() || a.iter().any(|v| !v.is_finite()) {
        return Err(BridgeError::invalid("matrix exponential of non-finite input"));
    }
    let x = a * t;
    if x.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::identity(a.nrows(), a.nrows()));
    }
    let e = x.exp();
    if e.iter().any(|v| !v.is_finite()) {
        return Err(BridgeError::invalid("matrix exponential overflowed"));
    }
    Ok(e)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Extreme eigenvalues of the symmetric part of `m`.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Cholesky factor of a symmetric positive definite matrix, or `None`.
pub fn spd_factor(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m))
}

pub fn spd_solve_vec(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    spd_factor(m).map(|c| c.solve(b))
}
