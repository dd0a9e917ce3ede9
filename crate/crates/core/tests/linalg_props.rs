use proptest::prelude::*;
use ratsi::linalg::lu::lu_solve_shifted;
use ratsi::linalg::qr::orthogonality_defect;
use ratsi::linalg::random::{gaussian_matrix, haar};
use ratsi::linalg::{c, eig_dense, qr_householder, singular_values, ComplexMatrix, C64, UNIT_ROUNDOFF};

/// `U diag(sigma) V^*` with singular values log-spaced from 1 down to `1/kappa`.
fn with_condition(n: usize, m: usize, kappa: f64, seed: u64) -> ComplexMatrix {
    let u = haar(n, seed, true).columns_range(0, m);
    let v = haar(m, seed + 1, true);
    let s: Vec<C64> = (0..m)
        .map(|i| {
            let t = if m == 1 { 0.0 } else { i as f64 / (m - 1) as f64 };
            C64::new(kappa.powf(-t), 0.0)
        })
        .collect();
    u.scale_columns(&s).matmul(&v.adjoint())
}

fn sizes() -> impl Strategy<Value = (usize, usize)> {
    (2usize..24).prop_flat_map(|n| (Just(n), 1..=n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn householder_qr_reconstructs_and_stays_orthonormal(
        (n, m) in sizes(),
        log_kappa in 0.0f64..12.0,
        seed in any::<u32>(),
    ) {
        let x = with_condition(n, m, 10f64.powf(log_kappa), seed as u64);
        let f = qr_householder(&x).unwrap();
        let tol = 10.0 * n as f64 * UNIT_ROUNDOFF;
        prop_assert!(orthogonality_defect(&f.q) <= tol);
        prop_assert!(f.q.matmul(&f.r).sub(&x).norm_fro() <= tol * x.norm_fro());
        for j in 0..m {
            prop_assert!(f.r[(j, j)].im == 0.0 && f.r[(j, j)].re >= 0.0);
            for i in j + 1..m {
                prop_assert!(f.r[(i, j)] == C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn singular_values_ignore_unitary_factors(
        (n, m) in sizes(),
        log_kappa in 0.0f64..3.0,
        seed in any::<u32>(),
    ) {
        let seed = seed as u64;
        let x = with_condition(n, m, 10f64.powf(log_kappa), seed);
        let left = haar(n, seed + 7, true);
        let right = haar(m, seed + 8, true);
        let s0 = singular_values(&x).unwrap();
        let s1 = singular_values(&left.matmul(&x).matmul(&right)).unwrap();
        for (a, b) in s0.iter().zip(&s1) {
            prop_assert!((a - b).abs() <= 1e-10 * a, "{a} vs {b}");
        }
    }

    #[test]
    fn hermitian_eigenvectors_are_orthonormal_with_real_eigenvalues(n in 2usize..30, seed in any::<u32>()) {
        let g = gaussian_matrix(n, n, seed as u64, true);
        let h = g.add(&g.adjoint());
        let e = eig_dense(&h).unwrap();
        prop_assert!(e.is_hermitian_path);
        prop_assert!(e.eigenvalues.iter().all(|l| l.im == 0.0));
        let gram = e.eigenvectors.adjoint_mul(&e.eigenvectors);
        prop_assert!(gram.sub(&ComplexMatrix::identity(n)).norm_fro() <= 1e-12);
    }

    #[test]
    fn shifted_solve_backward_error_is_tiny(
        n in 2usize..40,
        k in 1usize..4,
        zr in -2.0f64..2.0,
        zi in -2.0f64..2.0,
        seed in any::<u32>(),
    ) {
        let seed = seed as u64;
        let a = gaussian_matrix(n, n, seed, true).scale(c(1.0 / (n as f64).sqrt(), 0.0));
        let rhs = gaussian_matrix(n, k, seed + 1, true);
        let z = c(zr, zi);
        let x = lu_solve_shifted(&a, z, &rhs).unwrap();
        let e = rhs.sub(&a.shifted_negation(z).matmul(&x));
        let norm_a = singular_values(&a).unwrap()[0];
        prop_assert!(e.norm_fro() <= 1e-13 * norm_a * x.norm_fro(),
            "|E| = {:e}, |A| = {norm_a:e}, |X| = {:e}", e.norm_fro(), x.norm_fro());
    }
}
