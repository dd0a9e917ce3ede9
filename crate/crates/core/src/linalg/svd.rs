//! One-sided (Hestenes) Jacobi SVD.
//!
//! Orthogonalizes columns pairwise by plane rotations applied from the
//! right. Small singular values of matrices that are well conditioned after
//! column scaling come out with high relative accuracy, which a Gram-matrix
//! eigendecomposition cannot deliver once `kappa` passes `1/sqrt(u)`.

use super::matrix::{dot, norm2, ComplexMatrix, C64, ZERO};
use super::UNIT_ROUNDOFF;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Nonincreasing, nonnegative.
    pub singular_values: Vec<f64>,
    /// `n x m`; columns belonging to zero singular values are zero.
    pub u: ComplexMatrix,
    /// `m x m` unitary.
    pub v: ComplexMatrix,
    pub sweeps: usize,
}

impl SvdResult {
    pub fn sigma_max(&self) -> f64 {
        self.singular_values[0]
    }

    pub fn sigma_min(&self) -> f64 {
        *self.singular_values.last().expect("at least one singular value")
    }

    /// `U diag(sigma) V^*`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let s: Vec<C64> = self.singular_values.iter().map(|&x| C64::new(x, 0.0)).collect();
        self.u.scale_columns(&s).matmul(&self.v.adjoint())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JacobiOptions {
    /// Sweep cap is `sweeps_per_column * cols`.
    pub sweeps_per_column: usize,
}

impl Default for JacobiOptions {
    fn default() -> Self {
        Self { sweeps_per_column: 30 }
    }
}

pub fn svd_jacobi(x: &ComplexMatrix) -> Result<SvdResult> {
    svd_jacobi_with(x, JacobiOptions::default())
}

pub fn svd_jacobi_with(x: &ComplexMatrix, opts: JacobiOptions) -> Result<SvdResult> {
    let (n, m) = (x.rows(), x.cols());
    if n < m {
        return Err(Error::Shape(format!("svd_jacobi needs rows >= cols, got {n}x{m}")));
    }
    let tol = UNIT_ROUNDOFF * (n as f64).sqrt();
    let max_sweeps = opts.sweeps_per_column * m.max(1);
    let mut a = x.clone();
    let mut v = ComplexMatrix::identity(m);
    let mut sweeps = 0;
    let mut converged = m == 1;
    while !converged {
        if sweeps == max_sweeps {
            return Err(Error::ConvergenceFailure {
                routine: "svd_jacobi",
                iterations: sweeps,
            });
        }
        sweeps += 1;
        let mut rotated = false;
        for i in 0..m - 1 {
            for j in i + 1..m {
                let alpha = norm2(a.col(i)).powi(2);
                let beta = norm2(a.col(j)).powi(2);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(a.col(i), a.col(j));
                let g = gamma.norm();
                if !(g > tol * (alpha.sqrt() * beta.sqrt())) {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate(&mut a, i, j, cs, sn, phase.conj());
                rotate(&mut v, i, j, cs, sn, phase.conj());
            }
        }
        converged = !rotated;
    }

    let mut order: Vec<(usize, f64)> = (0..m).map(|j| (j, norm2(a.col(j)))).collect();
    order.sort_by(|p, q| q.1.total_cmp(&p.1));
    let mut u = ComplexMatrix::zeros(n, m);
    let mut vv = ComplexMatrix::zeros(m, m);
    let mut sigma = Vec::with_capacity(m);
    for (k, &(j, s)) in order.iter().enumerate() {
        sigma.push(s);
        if s > 0.0 {
            let inv = 1.0 / s;
            let col: Vec<C64> = a.col(j).iter().map(|z| z * inv).collect();
            u.set_col(k, &col);
        }
        vv.set_col(k, v.col(j));
    }
    Ok(SvdResult {
        singular_values: sigma,
        u,
        v: vv,
        sweeps,
    })
}

/// Columns `i, j` <- `[c a_i - s e b, s a_i + c e b]` with `b = a_j`, `e` a unit phase.
fn rotate(a: &mut ComplexMatrix, i: usize, j: usize, cs: f64, sn: f64, e: C64) {
    let (ci, cj) = a.col_pair_mut(i, j);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let b = e * *y;
        let xi = *x;
        *x = xi * cs - b * sn;
        *y = xi * sn + b * cs;
    }
}

/// Singular values only, for any shape (wide inputs are transposed).
pub fn singular_values(x: &ComplexMatrix) -> Result<Vec<f64>> {
    if x.rows() >= x.cols() {
        Ok(svd_jacobi(x)?.singular_values)
    } else {
        Ok(svd_jacobi(&x.adjoint())?.singular_values)
    }
}

/// Moore-Penrose pseudoinverse with singular values below `cutoff * sigma_1` dropped.
/// Returns the pseudoinverse and the number of retained singular values.
pub fn pseudo_inverse(x: &ComplexMatrix, cutoff: f64) -> Result<(ComplexMatrix, usize)> {
    let wide = x.rows() < x.cols();
    let base = if wide { x.adjoint() } else { x.clone() };
    let svd = svd_jacobi(&base)?;
    let s1 = svd.sigma_max();
    let keep = svd
        .singular_values
        .iter()
        .take_while(|&&s| s > cutoff * s1 && s > 0.0)
        .count();
    let mut pinv = ComplexMatrix::zeros(base.cols(), base.rows());
    for k in 0..keep {
        let inv = 1.0 / svd.singular_values[k];
        for c in 0..base.rows() {
            let w = svd.u[(c, k)].conj() * inv;
            if w == ZERO {
                continue;
            }
            for r in 0..base.cols() {
                pinv[(r, c)] += svd.v[(r, k)] * w;
            }
        }
    }
    Ok((if wide { pinv.adjoint() } else { pinv }, keep))
}
