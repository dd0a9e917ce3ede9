//! LU with partial pivoting for shifted systems `(zI - A) X = B`.

use super::matrix::{norm2, ComplexMatrix, C64, ZERO};
use super::UNIT_ROUNDOFF;
use crate::error::{Error, Result};

/// Packed LU factors of `P M = L U` for a square `M`.
#[derive(Debug, Clone)]
pub struct LuFactorization {
    lu: ComplexMatrix,
    perm: Vec<usize>,
    /// `max |U_ij| / max |M_ij|`.
    pub growth: f64,
}

impl LuFactorization {
    /// Factors `m`; a pivot below `u * max|m_ij|` counts as exact singularity.
    pub fn new(m: &ComplexMatrix) -> Result<Self> {
        Self::factor(m, ZERO)
    }

    fn factor(m: &ComplexMatrix, z: C64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape(format!("LU needs a square matrix, got {}x{}", m.rows(), m.cols())));
        }
        let n = m.rows();
        let scale = m.max_abs();
        let tol = UNIT_ROUNDOFF * scale;
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut umax = 0.0f64;
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pmax > tol) {
                return Err(Error::SingularShift { z, step: k, pivot: pmax.max(0.0) });
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let t = lu[(p, j)];
                    lu[(p, j)] = lu[(k, j)];
                    lu[(k, j)] = t;
                }
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                lu[(i, k)] /= pivot;
            }
            for j in k + 1..n {
                let ukj = lu[(k, j)];
                if ukj == ZERO {
                    continue;
                }
                for i in k + 1..n {
                    let lik = lu[(i, k)];
                    lu[(i, j)] -= lik * ukj;
                }
            }
            for j in k..n {
                umax = umax.max(lu[(k, j)].norm());
            }
        }
        if !lu.is_finite() {
            return Err(Error::NonFinite("LU factors".into()));
        }
        let growth = if scale > 0.0 { umax / scale } else { 0.0 };
        Ok(Self { lu, perm, growth })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    pub fn solve(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        let n = self.dim();
        if rhs.rows() != n {
            return Err(Error::Shape(format!("rhs has {} rows, system has {n}", rhs.rows())));
        }
        let mut x = ComplexMatrix::zeros(n, rhs.cols());
        for j in 0..rhs.cols() {
            let b = rhs.col(j);
            let xc = x.col_mut(j);
            for (i, &p) in self.perm.iter().enumerate() {
                xc[i] = b[p];
            }
            for k in 0..n {
                let xk = xc[k];
                if xk == ZERO {
                    continue;
                }
                for i in k + 1..n {
                    xc[i] -= self.lu[(i, k)] * xk;
                }
            }
            for k in (0..n).rev() {
                xc[k] /= self.lu[(k, k)];
                let xk = xc[k];
                for i in 0..k {
                    xc[i] -= self.lu[(i, k)] * xk;
                }
            }
        }
        Ok(x)
    }
}

/// LU factorization of `zI - A`, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct ShiftedLu {
    pub z: C64,
    lu: LuFactorization,
}

impl ShiftedLu {
    pub fn new(a: &ComplexMatrix, z: C64) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape(format!("shifted solve needs square A, got {}x{}", a.rows(), a.cols())));
        }
        let lu = LuFactorization::factor(&a.shifted_negation(z), z)?;
        Ok(Self { z, lu })
    }

    pub fn solve(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.lu.solve(rhs)
    }

    pub fn growth(&self) -> f64 {
        self.lu.growth
    }
}

/// Solves `(zI - A) X = rhs` by LU with partial pivoting.
pub fn lu_solve_shifted(a: &ComplexMatrix, z: C64, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
    ShiftedLu::new(a, z)?.solve(rhs)
}

/// Per-column normwise backward error constants of a computed solution:
/// `||rhs_i - (zI - A) x_i|| / (u ||A|| ||x_i||)`, with `||A||` in Frobenius norm.
pub fn shifted_backward_error(a: &ComplexMatrix, z: C64, x: &ComplexMatrix, rhs: &ComplexMatrix) -> Vec<f64> {
    let res = rhs.sub(&a.shifted_negation(z).matmul(x));
    let anorm = a.norm_fro();
    res.columns()
        .zip(x.columns())
        .map(|(r, xc)| {
            let denom = UNIT_ROUNDOFF * anorm * norm2(xc);
            if denom > 0.0 {
                norm2(r) / denom
            } else {
                0.0
            }
        })
        .collect()
}
