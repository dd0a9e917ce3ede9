use proptest::prelude::*;
use ratsi::linalg::{eig_dense, re, ComplexMatrix, C64};
use ratsi::spectrum::{make_nonnormal, make_normal, place_danger, SpectrumSpec};

fn spectrum() -> impl Strategy<Value = SpectrumSpec> {
    (
        prop::collection::vec(10.0f64..15.0, 1..6),
        prop::collection::vec(0.0f64..5.0, 4..25),
    )
        .prop_map(|(t, u)| SpectrumSpec::new(t.into_iter().map(re).collect(), u.into_iter().map(re).collect()).unwrap())
}

/// Largest distance from a computed eigenvalue to its nearest unused exact one.
fn matching_error(exact: &[C64], computed: &[C64]) -> f64 {
    let mut used = vec![false; exact.len()];
    let mut worst = 0.0f64;
    for l in computed {
        let (i, d) = exact
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, e)| (i, (e - l).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        used[i] = true;
        worst = worst.max(d);
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn normal_matrix_has_the_requested_spectrum(spec in spectrum(), seed in any::<u32>()) {
        let tm = make_normal(&spec, seed as u64).unwrap();
        let e = eig_dense(&tm.a).unwrap();
        prop_assert!(matching_error(&spec.eigenvalues(), &e.eigenvalues) <= 1e-11);
    }

    #[test]
    fn nonnormal_left_vectors_are_biorthogonal(
        spec in spectrum(),
        log_kappa in 0.0f64..3.0,
        seed in any::<u32>(),
    ) {
        let tm = make_nonnormal(&spec, 10f64.powf(log_kappa), seed as u64).unwrap();
        let w = tm.w_biorthogonal();
        let defect = w.adjoint_mul(&tm.v).sub(&ComplexMatrix::identity(tm.n())).norm_fro();
        prop_assert!(defect <= 1e-10, "{defect:e}");
        prop_assert!(tm.wilkinson().iter().all(|x| x.is_finite() && *x >= 1.0 - 1e-12));
    }

    #[test]
    fn construction_is_deterministic(spec in spectrum(), seed in any::<u32>(), d in 1e-14f64..1e-2) {
        let spec = place_danger(&spec, re(10.0), d, 1.0, None).unwrap();
        let a = make_nonnormal(&spec, 50.0, seed as u64).unwrap();
        let b = make_nonnormal(&spec, 50.0, seed as u64).unwrap();
        prop_assert!(a.a.as_slice() == b.a.as_slice());
        prop_assert!(a.v.as_slice() == b.v.as_slice());
        let c = make_normal(&spec, seed as u64).unwrap();
        let d2 = make_normal(&spec, seed as u64).unwrap();
        prop_assert!(c.a.as_slice() == d2.a.as_slice());
    }
}
