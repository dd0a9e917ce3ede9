//! Dense eigendecompositions.
//!
//! Hermitian input goes through cyclic two-sided Jacobi. Everything else is
//! balanced, reduced to Hessenberg form by Householder reflectors, brought to
//! complex Schur form by single-shift QR, and eigenvectors are recovered by
//! back-substitution on the triangular factor.

use super::matrix::{norm2, ComplexMatrix, C64, ONE, ZERO};
use super::UNIT_ROUNDOFF;
use crate::error::{Error, Result};

/// Inputs with `||A - A^*||_F <= tol ||A||_F` take the Hermitian path.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct EigOptions {
    /// Jacobi sweep cap is `sweeps_per_dim * n`.
    pub sweeps_per_dim: usize,
    /// QR iterations allowed per deflated eigenvalue.
    pub shifts_per_eigenvalue: usize,
    pub balance: bool,
}

impl Default for EigOptions {
    fn default() -> Self {
        Self {
            sweeps_per_dim: 30,
            shifts_per_eigenvalue: 40,
            balance: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigDecomposition {
    pub eigenvalues: Vec<C64>,
    /// Unit-norm columns.
    pub eigenvectors: ComplexMatrix,
    pub is_hermitian_path: bool,
    /// Set when the eigenvector matrix is numerically singular or the
    /// triangular solve had to perturb a near-zero divisor.
    pub ill_conditioned: bool,
}

impl EigDecomposition {
    /// `||A x_i - lambda_i x_i||` for every pair.
    pub fn residuals(&self, a: &ComplexMatrix) -> Vec<f64> {
        pair_residuals(a, &self.eigenvalues, &self.eigenvectors)
    }
}

pub fn pair_residuals(a: &ComplexMatrix, values: &[C64], vectors: &ComplexMatrix) -> Vec<f64> {
    let av = a.matmul(vectors);
    values
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let r: Vec<C64> = av.col(i).iter().zip(vectors.col(i)).map(|(x, v)| x - l * v).collect();
            norm2(&r)
        })
        .collect()
}

pub fn eig_dense(a: &ComplexMatrix) -> Result<EigDecomposition> {
    eig_dense_with(a, EigOptions::default())
}

pub fn eig_dense_with(a: &ComplexMatrix, opts: EigOptions) -> Result<EigDecomposition> {
    if !a.is_square() {
        return Err(Error::Shape(format!("eig needs a square matrix, got {}x{}", a.rows(), a.cols())));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("eig input".into()));
    }
    if a.hermitian_defect() <= HERMITIAN_TOL {
        eig_hermitian(&a.hermitian_part(), opts)
    } else {
        eig_general(a, opts)
    }
}

/// Cyclic Jacobi on a Hermitian matrix. Eigenvalues come back ascending.
pub fn eig_hermitian(a: &ComplexMatrix, opts: EigOptions) -> Result<EigDecomposition> {
    let n = a.rows();
    let mut h = a.clone();
    let mut v = ComplexMatrix::identity(n);
    let fro = a.norm_fro();
    let max_sweeps = opts.sweeps_per_dim * n.max(1);
    let mut sweeps = 0;
    loop {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = h[(p, q)];
                let g = apq.norm();
                let app = h[(p, p)].re;
                let aqq = h[(q, q)].re;
                let thresh = UNIT_ROUNDOFF * (app.abs() * aqq.abs()).sqrt().max(UNIT_ROUNDOFF * fro);
                if !(g > thresh) {
                    continue;
                }
                rotated = true;
                let phase = apq / g;
                let tau = (aqq - app) / (2.0 * g);
                let t = if tau >= 0.0 { 1.0 } else { -1.0 } / (tau.abs() + (1.0 + tau * tau).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                // G = [[c, s], [-s e, c e]] with e = conj(phase).
                let e = phase.conj();
                let g11 = C64::new(cs, 0.0);
                let g12 = C64::new(sn, 0.0);
                let g21 = -e * sn;
                let g22 = e * cs;
                for r in 0..n {
                    let x = h[(r, p)];
                    let y = h[(r, q)];
                    h[(r, p)] = x * g11 + y * g21;
                    h[(r, q)] = x * g12 + y * g22;
                }
                for col in 0..n {
                    let x = h[(p, col)];
                    let y = h[(q, col)];
                    h[(p, col)] = g11.conj() * x + g21.conj() * y;
                    h[(q, col)] = g12.conj() * x + g22.conj() * y;
                }
                h[(p, q)] = ZERO;
                h[(q, p)] = ZERO;
                h[(p, p)] = C64::new(h[(p, p)].re, 0.0);
                h[(q, q)] = C64::new(h[(q, q)].re, 0.0);
                for r in 0..n {
                    let x = v[(r, p)];
                    let y = v[(r, q)];
                    v[(r, p)] = x * g11 + y * g21;
                    v[(r, q)] = x * g12 + y * g22;
                }
            }
        }
        if !rotated {
            break;
        }
        sweeps += 1;
        if sweeps >= max_sweeps {
            return Err(Error::ConvergenceFailure {
                routine: "hermitian jacobi",
                iterations: sweeps,
            });
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| h[(i, i)].re.total_cmp(&h[(j, j)].re));
    let eigenvalues = order.iter().map(|&i| C64::new(h[(i, i)].re, 0.0)).collect();
    let eigenvectors = v.select_columns(&order).normalize_columns();
    Ok(EigDecomposition {
        eigenvalues,
        eigenvectors,
        is_hermitian_path: true,
        ill_conditioned: false,
    })
}

/// Complex Schur form `A = Z T Z^*` with `T` upper triangular.
#[derive(Debug, Clone)]
pub struct SchurForm {
    pub t: ComplexMatrix,
    pub z: ComplexMatrix,
}

impl SchurForm {
    pub fn eigenvalues(&self) -> Vec<C64> {
        self.t.diag()
    }

    /// Reorders so that the diagonal is sorted by `key` descending, using
    /// adjacent unitary swaps. Stable for equal keys.
    pub fn sort_by_key_desc(&mut self, key: impl Fn(C64) -> f64) {
        let n = self.t.rows();
        // Insertion sort: each swap is one 2x2 exchange.
        for i in 1..n {
            let mut k = i;
            while k > 0 && key(self.t[(k, k)]) > key(self.t[(k - 1, k - 1)]) {
                self.swap_adjacent(k - 1);
                k -= 1;
            }
        }
    }

    /// Exchanges diagonal entries `k` and `k + 1`.
    pub fn swap_adjacent(&mut self, k: usize) {
        let n = self.t.rows();
        let a = self.t[(k, k)];
        let b = self.t[(k, k + 1)];
        let d = self.t[(k + 1, k + 1)];
        // (b, d - a) spans the eigenvector for d within the 2x2 block.
        // G (b, d - a) = r e_1, so the first column of G^* is that eigenvector.
        let (cs, sn, _) = givens(b, d - a);
        apply_rows(&mut self.t, k, cs, sn, k, n);
        apply_cols(&mut self.t, k, cs, sn, 0, k + 2);
        apply_cols(&mut self.z, k, cs, sn, 0, n);
        self.t[(k + 1, k)] = ZERO;
    }
}

/// Schur decomposition without balancing (Z stays unitary).
pub fn schur_decompose(a: &ComplexMatrix) -> Result<SchurForm> {
    if !a.is_square() {
        return Err(Error::Shape("schur needs a square matrix".into()));
    }
    let (h, q) = hessenberg(a);
    let (t, z) = hessenberg_qr(h, q, EigOptions::default().shifts_per_eigenvalue)?;
    Ok(SchurForm { t, z })
}

/// Residuals above `BALANCE_GUARD * n * u * ||A||_F` after balancing trigger
/// a second, unbalanced solve; the better of the two is kept.
const BALANCE_GUARD: f64 = 100.0;

fn eig_general(a: &ComplexMatrix, opts: EigOptions) -> Result<EigDecomposition> {
    let plain = eig_general_once(a, opts.balance, opts)?;
    if !opts.balance {
        return Ok(plain);
    }
    let worst = |e: &EigDecomposition| e.residuals(a).into_iter().fold(0.0f64, |m, r| if r.is_nan() { f64::INFINITY } else { m.max(r) });
    let tol = BALANCE_GUARD * a.rows() as f64 * UNIT_ROUNDOFF * a.norm_fro();
    let first = worst(&plain);
    if first <= tol {
        return Ok(plain);
    }
    // Balancing can spread eigenvector errors over rows of very different
    // scale; nearly triangular inputs are the usual victims.
    let unbalanced = eig_general_once(a, false, opts)?;
    Ok(if worst(&unbalanced) < first { unbalanced } else { plain })
}

fn eig_general_once(a: &ComplexMatrix, balance_first: bool, opts: EigOptions) -> Result<EigDecomposition> {
    let n = a.rows();
    let (ab, scale) = if balance_first { balance(a) } else { (a.clone(), vec![1.0; n]) };
    let (h, q) = hessenberg(&ab);
    let (t, z) = hessenberg_qr(h, q, opts.shifts_per_eigenvalue)?;
    let (x, perturbed) = triangular_eigenvectors(&t);
    let mut v = z.matmul(&x);
    for j in 0..n {
        for i in 0..n {
            v[(i, j)] *= scale[i];
        }
    }
    let v = v.normalize_columns();
    let kappa = super::condition_number(&v).unwrap_or(f64::INFINITY);
    Ok(EigDecomposition {
        eigenvalues: t.diag(),
        eigenvectors: v,
        is_hermitian_path: false,
        ill_conditioned: perturbed || !(kappa < 1.0 / (UNIT_ROUNDOFF * n as f64)),
    })
}

/// Diagonal similarity by powers of two to even out row and column norms.
fn balance(a: &ComplexMatrix) -> (ComplexMatrix, Vec<f64>) {
    let n = a.rows();
    let mut b = a.clone();
    let mut scale = vec![1.0f64; n];
    let radix = 2.0f64;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].l1_norm();
                    r += b[(i, j)].l1_norm();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            let rr = r;
            while cc < rr / radix {
                cc *= radix * radix;
                f *= radix;
            }
            while cc >= rr * radix {
                cc /= radix * radix;
                f /= radix;
            }
            let c_new = c * f;
            let r_new = r / f;
            if (c_new + r_new) < 0.95 * s {
                done = false;
                scale[i] *= f;
                for j in 0..n {
                    b[(i, j)] /= f;
                }
                for j in 0..n {
                    b[(j, i)] *= f;
                }
            }
        }
    }
    (b, scale)
}

/// Householder reduction `A = Q H Q^*` with `H` upper Hessenberg.
pub fn hessenberg(a: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    let n = a.rows();
    let mut h = a.clone();
    let mut q = ComplexMatrix::identity(n);
    for k in 0..n.saturating_sub(2) {
        let x: Vec<C64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        let xn = norm2(&x);
        if xn == 0.0 {
            continue;
        }
        let x0 = x[0];
        let phase = if x0 == ZERO { ONE } else { x0 / x0.norm() };
        let alpha = -phase * xn;
        let mut v = x.clone();
        v[0] -= alpha;
        let vn2 = norm2(&v).powi(2);
        if vn2 == 0.0 {
            continue;
        }
        let tau = 2.0 / vn2;
        // H <- P H on rows k+1.., P = I - tau v v^*
        for j in k..n {
            let mut s = ZERO;
            for (t, vi) in v.iter().enumerate() {
                s += vi.conj() * h[(k + 1 + t, j)];
            }
            s *= tau;
            for (t, vi) in v.iter().enumerate() {
                h[(k + 1 + t, j)] -= vi * s;
            }
        }
        // H <- H P on columns k+1..
        for mat in [&mut h, &mut q] {
            for r in 0..n {
                let mut s = ZERO;
                for (t, vi) in v.iter().enumerate() {
                    s += mat[(r, k + 1 + t)] * vi;
                }
                s *= tau;
                for (t, vi) in v.iter().enumerate() {
                    mat[(r, k + 1 + t)] -= s * vi.conj();
                }
            }
        }
        h[(k + 1, k)] = alpha;
        for i in k + 2..n {
            h[(i, k)] = ZERO;
        }
    }
    (h, q)
}

/// `(c, s, r)` with `[[c, s], [-conj(s), c]] (f, g)^T = (r, 0)^T`, `c` real.
fn givens(f: C64, g: C64) -> (f64, C64, C64) {
    let gn = g.norm();
    if gn == 0.0 {
        return (1.0, ZERO, f);
    }
    let fnm = f.norm();
    if fnm == 0.0 {
        return (0.0, g.conj() / gn, C64::new(gn, 0.0));
    }
    let nrm = fnm.hypot(gn);
    let ph = f / fnm;
    (fnm / nrm, ph * g.conj() / nrm, ph * nrm)
}

/// Rows `i, i+1` over columns `c0..c1` by `G = [[c, s], [-conj(s), c]]`.
fn apply_rows(m: &mut ComplexMatrix, i: usize, cs: f64, sn: C64, c0: usize, c1: usize) {
    for j in c0..c1 {
        let a = m[(i, j)];
        let b = m[(i + 1, j)];
        m[(i, j)] = a * cs + sn * b;
        m[(i + 1, j)] = -sn.conj() * a + b * cs;
    }
}

/// Columns `i, i+1` over rows `r0..r1` by `G^*`.
fn apply_cols(m: &mut ComplexMatrix, i: usize, cs: f64, sn: C64, r0: usize, r1: usize) {
    for r in r0..r1 {
        let a = m[(r, i)];
        let b = m[(r, i + 1)];
        m[(r, i)] = a * cs + b * sn.conj();
        m[(r, i + 1)] = -a * sn + b * cs;
    }
}

/// Single-shift QR on an upper Hessenberg matrix, accumulating into `z`.
fn hessenberg_qr(mut h: ComplexMatrix, mut z: ComplexMatrix, cap: usize) -> Result<(ComplexMatrix, ComplexMatrix)> {
    let n = h.rows();
    if n == 0 {
        return Ok((h, z));
    }
    let u = UNIT_ROUNDOFF;
    let small = f64::MIN_POSITIVE / u;
    let hnorm = h.norm_fro().max(small);
    let mut hi = n - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    while hi > 0 {
        // Find the start of the active unreduced block.
        let mut l = hi;
        while l > 0 {
            let sub = h[(l, l - 1)].l1_norm();
            let mut tst = h[(l - 1, l - 1)].l1_norm() + h[(l, l)].l1_norm();
            if tst == 0.0 {
                tst = hnorm;
            }
            if sub <= small {
                break;
            }
            if sub <= u * tst {
                // Ahues-Tisseur test: deflate only if the perturbation is
                // small relative to the local eigenvalue gap too.
                let ab = sub.max(h[(l - 1, l)].l1_norm());
                let ba = sub.min(h[(l - 1, l)].l1_norm());
                let diff = (h[(l - 1, l - 1)] - h[(l, l)]).l1_norm();
                let aa = h[(l, l)].l1_norm().max(diff);
                let bb = h[(l, l)].l1_norm().min(diff);
                let s = aa + ab;
                if ba * (ab / s) <= small.max(u * (bb * (aa / s))) {
                    break;
                }
            }
            l -= 1;
        }
        if l > 0 {
            h[(l, l - 1)] = ZERO;
        }
        if l == hi {
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        total += 1;
        if iter > cap {
            return Err(Error::ConvergenceFailure {
                routine: "hessenberg qr",
                iterations: total,
            });
        }
        let shift = if iter % 10 == 0 {
            h[(hi, hi)] + 0.75 * h[(hi, hi - 1)].norm()
        } else {
            let a = h[(hi - 1, hi - 1)];
            let b = h[(hi - 1, hi)];
            let c = h[(hi, hi - 1)];
            let d = h[(hi, hi)];
            let p = (a - d) * 0.5;
            let disc = (p * p + b * c).sqrt();
            let den = if (p + disc).norm() >= (p - disc).norm() { p + disc } else { p - disc };
            if den == ZERO {
                d
            } else {
                d - b * c / den
            }
        };
        // Implicit single-shift step on rows/cols l..=hi.
        let (cs, sn, _) = givens(h[(l, l)] - shift, h[(l + 1, l)]);
        apply_rows(&mut h, l, cs, sn, l, n);
        apply_cols(&mut h, l, cs, sn, 0, (l + 3).min(hi + 1));
        apply_cols(&mut z, l, cs, sn, 0, n);
        for k in l + 1..hi {
            let (cs, sn, r) = givens(h[(k, k - 1)], h[(k + 1, k - 1)]);
            h[(k, k - 1)] = r;
            h[(k + 1, k - 1)] = ZERO;
            apply_rows(&mut h, k, cs, sn, k, n);
            apply_cols(&mut h, k, cs, sn, 0, (k + 3).min(hi + 1));
            apply_cols(&mut z, k, cs, sn, 0, n);
        }
    }
    for j in 0..n {
        for i in j + 1..n {
            h[(i, j)] = ZERO;
        }
    }
    Ok((h, z))
}

/// Eigenvectors of an upper triangular matrix by back-substitution.
/// Returns the vectors and whether any divisor had to be perturbed.
fn triangular_eigenvectors(t: &ComplexMatrix) -> (ComplexMatrix, bool) {
    let n = t.rows();
    let tnorm = t.norm_fro();
    let smin = (UNIT_ROUNDOFF * tnorm).max(f64::MIN_POSITIVE / UNIT_ROUNDOFF);
    let mut x = ComplexMatrix::zeros(n, n);
    let mut perturbed = false;
    for k in 0..n {
        let lam = t[(k, k)];
        let col = x.col_mut(k);
        col[k] = ONE;
        for j in (0..k).rev() {
            let mut s = ZERO;
            for i in j + 1..=k {
                s += t[(j, i)] * col[i];
            }
            let mut den = t[(j, j)] - lam;
            if den.norm() < smin {
                den = C64::new(smin, 0.0);
                perturbed = true;
            }
            col[j] = -s / den;
            // Rescale on growth to avoid overflow.
            let m = col[j].norm();
            if m > 1e100 {
                for v in col.iter_mut().take(k + 1) {
                    *v /= m;
                }
            }
        }
    }
    (x, perturbed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix::{c, re};
    use crate::linalg::random::{gaussian_matrix, haar};

    fn sorted_re(v: &[C64]) -> Vec<f64> {
        let mut r: Vec<f64> = v.iter().map(|z| z.re).collect();
        r.sort_by(f64::total_cmp);
        r
    }

    #[test]
    fn diagonal_input() {
        let a = ComplexMatrix::from_diag(&[re(1.0), re(2.0), re(3.0)]);
        let e = eig_dense(&a).unwrap();
        assert!(e.is_hermitian_path);
        assert_eq!(sorted_re(&e.eigenvalues), vec![1.0, 2.0, 3.0]);
        for (k, l) in e.eigenvalues.iter().enumerate() {
            let idx = (l.re - 1.0).round() as usize;
            assert!((e.eigenvectors[(idx, k)].norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn swap_matrix() {
        let a = ComplexMatrix::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = eig_dense(&a).unwrap();
        let v = sorted_re(&e.eigenvalues);
        assert!((v[0] + 1.0).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn companion_roots() {
        // Oracle: roots of z^2 - 3z + 2 are 1 and 2.
        let a = ComplexMatrix::from_real_rows(&[vec![3.0, -2.0], vec![1.0, 0.0]]).unwrap();
        let e = eig_dense(&a).unwrap();
        assert!(!e.is_hermitian_path);
        let v = sorted_re(&e.eigenvalues);
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 2.0).abs() < 1e-12);
        assert!(e.eigenvalues.iter().all(|z| z.im.abs() < 1e-12));
    }

    #[test]
    fn general_residuals_and_similarity_invariance() {
        for seed in 0..10 {
            let n = 12 + seed as usize;
            let a = gaussian_matrix(n, n, seed, true);
            let e = eig_dense(&a).unwrap();
            let bound = 1000.0 * n as f64 * UNIT_ROUNDOFF * crate::linalg::spectral_norm(&a).unwrap();
            for r in e.residuals(&a) {
                assert!(r <= bound, "seed {seed}: residual {r:e} > {bound:e}");
            }
            // Trace is the eigenvalue sum.
            let tr: C64 = a.diag().iter().sum();
            let s: C64 = e.eigenvalues.iter().sum();
            assert!((tr - s).norm() < 1e-10 * a.norm_fro());
        }
    }

    #[test]
    fn hermitian_orthogonality() {
        let g = gaussian_matrix(25, 25, 4, true);
        let a = g.hermitian_part();
        let e = eig_dense(&a).unwrap();
        assert!(e.is_hermitian_path);
        let d = e.eigenvectors.adjoint_mul(&e.eigenvectors).sub(&ComplexMatrix::identity(25));
        assert!(d.max_abs() <= 1e-12);
        assert!(e.eigenvalues.iter().all(|z| z.im == 0.0));
    }

    #[test]
    fn schur_reorder_keeps_similarity() {
        let a = gaussian_matrix(8, 8, 9, true);
        let mut s = schur_decompose(&a).unwrap();
        s.sort_by_key_desc(|z| z.norm());
        let ev = s.eigenvalues();
        for w in ev.windows(2) {
            assert!(w[0].norm() >= w[1].norm() - 1e-12);
        }
        let back = s.z.matmul(&s.t).matmul(&s.z.adjoint());
        assert!(back.sub(&a).norm_fro() <= 1e-12 * a.norm_fro());
        for j in 0..8 {
            for i in j + 1..8 {
                assert_eq!(s.t[(i, j)], ZERO);
            }
        }
    }

    #[test]
    fn nonnormal_with_known_spectrum() {
        // A = V diag(lambda) V^{-1} with a mildly ill-conditioned V.
        let n = 10;
        let u1 = haar(n, 1, false);
        let u2 = haar(n, 2, false);
        let ramp: Vec<C64> = (0..n).map(|i| re(10f64.powf(-(i as f64) / (n - 1) as f64 * 2.0))).collect();
        let v = u1.scale_columns(&ramp).matmul(&u2);
        let lam: Vec<C64> = (0..n).map(|i| c(i as f64 + 1.0, 0.0)).collect();
        let vinv = crate::linalg::LuFactorization::new(&v).unwrap().solve(&ComplexMatrix::identity(n)).unwrap();
        let a = v.scale_columns(&lam).matmul(&vinv);
        let e = eig_dense(&a).unwrap();
        let got = sorted_re(&e.eigenvalues);
        for (i, g) in got.iter().enumerate() {
            assert!((g - (i as f64 + 1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn jordan_block_sets_warning() {
        let a = ComplexMatrix::from_real_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let e = eig_dense(&a).unwrap();
        assert!(e.ill_conditioned);
    }
}
