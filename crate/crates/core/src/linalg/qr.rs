//! Householder QR and Gram-Schmidt with full reorthogonalization.

use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, norm2, ComplexMatrix, C64, ONE, ZERO};
use super::UNIT_ROUNDOFF;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QrMethod {
    Householder,
    MgsReorth,
}

/// Thin QR factorization `X = Q R` with `diag(R)` real and nonnegative.
#[derive(Debug, Clone)]
pub struct QrFactorization {
    pub q: ComplexMatrix,
    pub r: ComplexMatrix,
    pub method: QrMethod,
}

/// Householder QR of a tall matrix.
///
/// Reflector `k` only touches rows `k..n`, so the leading columns of `Q`
/// depend only on the leading columns of `X`.
pub fn qr_householder(x: &ComplexMatrix) -> Result<QrFactorization> {
    let (n, m) = (x.rows(), x.cols());
    if n < m {
        return Err(Error::Shape(format!("qr_householder needs rows >= cols, got {n}x{m}")));
    }
    let colmax = x.column_norms().into_iter().fold(0.0, f64::max);
    let tiny = f64::MIN_POSITIVE.max(colmax * UNIT_ROUNDOFF * UNIT_ROUNDOFF);

    let mut r = x.clone();
    let mut reflectors: Vec<(Vec<C64>, f64)> = Vec::with_capacity(m);
    let mut alphas = Vec::with_capacity(m);

    for k in 0..m {
        let xk = &r.col(k)[k..];
        let nrm = norm2(xk);
        if !(nrm > tiny) {
            return Err(Error::DegeneratePivot { column: k, norm: nrm });
        }
        let x0 = xk[0];
        let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { ONE };
        let alpha = -phase * nrm;
        let mut v = xk.to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let tau = 2.0 / vnorm2;
        for j in k..m {
            let cj = &mut r.col_mut(j)[k..];
            let s = dot(&v, cj) * tau;
            axpy(-s, &v, cj);
        }
        // The reflector maps x_k exactly onto alpha e_1.
        let ck = r.col_mut(k);
        ck[k] = alpha;
        ck[k + 1..].iter_mut().for_each(|z| *z = ZERO);
        reflectors.push((v, tau));
        alphas.push(alpha);
    }

    let mut q = ComplexMatrix::eye(n, m);
    for (k, (v, tau)) in reflectors.iter().enumerate().rev() {
        for j in 0..m {
            let cj = &mut q.col_mut(j)[k..];
            let s = dot(v, cj) * *tau;
            axpy(-s, v, cj);
        }
    }

    let mut rr = ComplexMatrix::zeros(m, m);
    for j in 0..m {
        for i in 0..=j {
            rr[(i, j)] = r[(i, j)];
        }
    }
    // Normalize so diag(R) is real and positive: Q <- Q D, R <- D^* R.
    for (k, &alpha) in alphas.iter().enumerate() {
        let ph = alpha / alpha.norm();
        q.col_mut(k).iter_mut().for_each(|z| *z *= ph);
        for j in k..m {
            rr[(k, j)] *= ph.conj();
        }
        rr[(k, k)] = C64::new(alpha.norm(), 0.0);
    }
    Ok(QrFactorization {
        q,
        r: rr,
        method: QrMethod::Householder,
    })
}

/// Orthonormal factor `qf(X)`.
pub fn orth(x: &ComplexMatrix) -> Result<ComplexMatrix> {
    Ok(qr_householder(x)?.q)
}

/// Outcome of orthogonalizing one vector against an orthonormal basis.
#[derive(Debug, Clone)]
pub enum GramSchmidt {
    /// `y = basis * coeffs + residual_norm * q`.
    Vector {
        q: Vec<C64>,
        coeffs: Vec<C64>,
        residual_norm: f64,
    },
    /// `y` lies in the span of the basis to working precision.
    Breakdown { coeffs: Vec<C64>, residual_norm: f64 },
}

impl GramSchmidt {
    pub fn is_breakdown(&self) -> bool {
        matches!(self, GramSchmidt::Breakdown { .. })
    }

    pub fn coeffs(&self) -> &[C64] {
        match self {
            GramSchmidt::Vector { coeffs, .. } | GramSchmidt::Breakdown { coeffs, .. } => coeffs,
        }
    }

    pub fn residual_norm(&self) -> f64 {
        match self {
            GramSchmidt::Vector { residual_norm, .. }
            | GramSchmidt::Breakdown { residual_norm, .. } => *residual_norm,
        }
    }
}

/// Modified Gram-Schmidt against the columns of `basis`, run exactly twice.
pub fn mgs_orthogonalize(y: &[C64], basis: &ComplexMatrix) -> Result<GramSchmidt> {
    let n = y.len();
    if basis.rows() != n {
        return Err(Error::Shape(format!(
            "vector of length {n} against basis with {} rows",
            basis.rows()
        )));
    }
    let ynorm = norm2(y);
    let mut w = y.to_vec();
    let mut coeffs = vec![ZERO; basis.cols()];
    for _pass in 0..2 {
        for (j, qj) in basis.columns().enumerate() {
            let h = dot(qj, &w);
            axpy(-h, qj, &mut w);
            coeffs[j] += h;
        }
    }
    let residual_norm = norm2(&w);
    if !(residual_norm >= n as f64 * UNIT_ROUNDOFF * ynorm) || residual_norm == 0.0 {
        return Ok(GramSchmidt::Breakdown {
            coeffs,
            residual_norm,
        });
    }
    let inv = 1.0 / residual_norm;
    w.iter_mut().for_each(|z| *z *= inv);
    Ok(GramSchmidt::Vector {
        q: w,
        coeffs,
        residual_norm,
    })
}

/// Column-by-column QR via [`mgs_orthogonalize`].
pub fn qr_mgs(x: &ComplexMatrix) -> Result<QrFactorization> {
    let (n, m) = (x.rows(), x.cols());
    if n < m {
        return Err(Error::Shape(format!("qr_mgs needs rows >= cols, got {n}x{m}")));
    }
    let mut q = ComplexMatrix::zeros(n, m);
    let mut r = ComplexMatrix::zeros(m, m);
    let first = norm2(x.col(0));
    if first == 0.0 {
        return Err(Error::DegeneratePivot { column: 0, norm: 0.0 });
    }
    q.set_col(0, &x.col(0).iter().map(|z| z / first).collect::<Vec<_>>());
    r[(0, 0)] = C64::new(first, 0.0);
    for k in 1..m {
        let basis = q.columns_range(0, k);
        match mgs_orthogonalize(x.col(k), &basis)? {
            GramSchmidt::Vector {
                q: qk,
                coeffs,
                residual_norm,
            } => {
                q.set_col(k, &qk);
                for (i, h) in coeffs.into_iter().enumerate() {
                    r[(i, k)] = h;
                }
                r[(k, k)] = C64::new(residual_norm, 0.0);
            }
            GramSchmidt::Breakdown { residual_norm, .. } => {
                return Err(Error::DegeneratePivot {
                    column: k,
                    norm: residual_norm,
                })
            }
        }
    }
    Ok(QrFactorization {
        q,
        r,
        method: QrMethod::MgsReorth,
    })
}

/// `||Q^* Q - I||_F`.
pub fn orthogonality_defect(q: &ComplexMatrix) -> f64 {
    let g = q.adjoint_mul(q);
    g.sub(&ComplexMatrix::identity(q.cols())).norm_fro()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix::{c, re};
    use crate::linalg::random::gaussian_matrix;
    use crate::linalg::spectral_norm;

    const U: f64 = UNIT_ROUNDOFF;

    #[test]
    fn identity_factors_trivially() {
        let f = qr_householder(&ComplexMatrix::identity(3)).unwrap();
        assert!(f.q.max_abs_diff(&ComplexMatrix::identity(3)) < 1e-15);
        assert!(f.r.max_abs_diff(&ComplexMatrix::identity(3)) < 1e-15);
    }

    #[test]
    fn permutation_matrix() {
        let x = ComplexMatrix::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let f = qr_householder(&x).unwrap();
        let det = f.q[(0, 0)] * f.q[(1, 1)] - f.q[(0, 1)] * f.q[(1, 0)];
        assert!((det.norm() - 1.0).abs() < 1e-15);
        assert!(f.q.matmul(&f.r).sub(&x).max_abs() <= 100.0 * U);
    }

    #[test]
    fn random_tall_gaussian_against_gram_matrix() {
        let x = gaussian_matrix(50, 10, 42, true);
        let f = qr_householder(&x).unwrap();
        // Oracle: explicit Gram matrix of Q, entrywise.
        let g = f.q.adjoint().matmul(&f.q);
        let mut worst = 0.0f64;
        for i in 0..10 {
            for j in 0..10 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - re(target)).norm());
            }
        }
        assert!(worst <= 5000.0 * U, "gram defect {worst:e}");
        let recon = f.q.matmul(&f.r).sub(&x);
        assert!(spectral_norm(&recon).unwrap() <= 100.0 * 10.0 * U * spectral_norm(&x).unwrap());
        for k in 0..10 {
            assert_eq!(f.r[(k, k)].im, 0.0);
            assert!(f.r[(k, k)].re > 0.0);
            for i in k + 1..10 {
                assert_eq!(f.r[(i, k)], ZERO);
            }
        }
    }

    #[test]
    fn rank_collapse_is_reported() {
        let x = ComplexMatrix::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]])
            .unwrap();
        assert!(matches!(
            qr_householder(&x),
            Err(Error::DegeneratePivot { column: 1, .. })
        ));
    }

    #[test]
    fn mgs_examples() {
        let basis = ComplexMatrix::eye(3, 1);
        match mgs_orthogonalize(&[ZERO, ONE, ZERO], &basis).unwrap() {
            GramSchmidt::Vector { q, coeffs, .. } => {
                assert_eq!(q, vec![ZERO, ONE, ZERO]);
                assert_eq!(coeffs, vec![ZERO]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let nearly = [ONE, re(1e-20), ZERO];
        assert!(mgs_orthogonalize(&nearly, &basis).unwrap().is_breakdown());

        let s = 1.0 / 2f64.sqrt();
        match mgs_orthogonalize(&[re(s), re(s), ZERO], &basis).unwrap() {
            GramSchmidt::Vector { q, coeffs, .. } => {
                assert!((q[1] - ONE).norm() < 1e-15 && q[0].norm() < 1e-15);
                assert!((coeffs[0] - re(s)).norm() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mgs_reproduces_input_and_is_orthogonal() {
        let basis = qr_householder(&gaussian_matrix(30, 5, 3, true)).unwrap().q;
        let y: Vec<C64> = (0..30).map(|i| c((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let GramSchmidt::Vector {
            q,
            coeffs,
            residual_norm,
        } = mgs_orthogonalize(&y, &basis).unwrap()
        else {
            panic!("unexpected breakdown")
        };
        let proj = basis.adjoint_matvec(&q);
        assert!(norm2(&proj) <= 100.0 * 30.0 * U);
        assert!((norm2(&q) - 1.0).abs() < 1e-14);
        let mut rebuilt = basis.matvec(&coeffs);
        axpy(re(residual_norm), &q, &mut rebuilt);
        let err: Vec<C64> = rebuilt.iter().zip(&y).map(|(a, b)| a - b).collect();
        assert!(norm2(&err) <= 1e-14 * norm2(&y));
    }

    #[test]
    fn mgs_qr_matches_householder_span() {
        let x = gaussian_matrix(20, 6, 9, true);
        let h = qr_householder(&x).unwrap();
        let g = qr_mgs(&x).unwrap();
        // Same sign convention, so the factors agree column by column.
        assert!(h.q.max_abs_diff(&g.q) < 1e-12);
        assert!(h.r.max_abs_diff(&g.r) < 1e-12);
    }
}
