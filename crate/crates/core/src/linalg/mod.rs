//! Dense complex kernels: QR, LU, SVD and eigendecompositions.

pub mod eig;
pub mod lu;
pub mod matrix;
pub mod qr;
pub mod random;
pub mod svd;

pub use eig::{eig_dense, schur_decompose, EigDecomposition, SchurForm};
pub use lu::{lu_solve_shifted, shifted_backward_error, LuFactorization, ShiftedLu};
pub use matrix::{c, dot, norm2, re, ComplexMatrix, C64};
pub use qr::{mgs_orthogonalize, orth, qr_householder, qr_mgs, GramSchmidt, QrFactorization, QrMethod};
pub use svd::{pseudo_inverse, singular_values, svd_jacobi, SvdResult};

use crate::error::Result;

/// Unit round-off used in every bound formula (`2^-52`).
pub const UNIT_ROUNDOFF: f64 = f64::EPSILON;

/// Largest singular value.
pub fn spectral_norm(x: &ComplexMatrix) -> Result<f64> {
    Ok(singular_values(x)?[0])
}

/// `sigma_1 / sigma_min`; `f64::INFINITY` when the smallest singular value is zero.
pub fn condition_number(x: &ComplexMatrix) -> Result<f64> {
    let s = singular_values(x)?;
    let smin = *s.last().expect("nonempty");
    if smin == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(s[0] / smin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_of_orthonormal_columns() {
        let q = random::random_orthonormal(30, 6, 1, true);
        assert!((condition_number(&q).unwrap() - 1.0).abs() <= 100.0 * UNIT_ROUNDOFF);
    }

    #[test]
    fn kappa_of_diagonal() {
        let x = ComplexMatrix::from_diag(&[re(1e10), re(1.0)]);
        assert_eq!(condition_number(&x).unwrap(), 1e10);
    }

    #[test]
    fn kappa_of_singular_is_infinite() {
        let x = ComplexMatrix::from_real_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let k = condition_number(&x).unwrap();
        assert!(k.is_infinite() || k > 1e15);
        let z = ComplexMatrix::from_diag(&[re(1.0), re(0.0)]);
        assert!(condition_number(&z).unwrap().is_infinite());
    }
}
