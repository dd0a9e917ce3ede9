use proptest::prelude::*;
use rayon::prelude::*;
use ratsi::diagnostics::{coordinates, principal_angles};
use ratsi::harness::experiments::{fig3_setup, fig6_setup, traced_run};
use ratsi::linalg::random::{gaussian_matrix, random_orthonormal};
use ratsi::subspace::IterationVariant;
use std::f64::consts::PI;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn angle_report_is_trigonometrically_consistent(
        n in 4usize..30,
        m in 1usize..4,
        tilt in 0.0f64..3.0,
        seed in any::<u32>(),
    ) {
        let seed = seed as u64;
        let y = random_orthonormal(n, m, seed, true);
        // Mix of y and noise so the angles spread from tiny to large.
        let noise = gaussian_matrix(n, m, seed + 1, true).scale(ratsi::linalg::re(10f64.powf(-4.0 + 2.0 * tilt)));
        let x = y.add(&noise);
        let r = principal_angles(&x, &y).unwrap();
        for i in 0..m {
            let (c, s, t) = (r.cosines[i], r.sines[i], r.tangents[i]);
            prop_assert!((c * c + s * s - 1.0).abs() <= 1e-12);
            if t.is_finite() {
                prop_assert!((t * c - s).abs() <= 1e-12 * (1.0 + t));
            }
        }
        prop_assert!(r.cosines.windows(2).all(|w| w[0] <= w[1] + 1e-15));
        prop_assert_eq!(r.largest_tangent, r.tangents[0]);
    }

    #[test]
    fn coordinates_in_a_normal_eigenbasis_keep_unit_energy(seed in 1u64..1000, d in prop::sample::select(vec![1e-4, 1e-10])) {
        let setup = fig3_setup(60, d, PI, 16, seed).unwrap();
        let c = coordinates(&setup.q0, &setup.tm, false);
        for j in 0..setup.q0.cols() {
            prop_assert!((c.energy(j) - 1.0).abs() <= 1e-12, "column {j}: {}", c.energy(j));
        }
    }
}

/// `kappa(X_1)` between the relaxed lower and the upper bound for 20 seeds
/// at each distance, normal and non-normal.
#[test]
fn first_iterate_conditioning_is_sandwiched() {
    let jobs: Vec<(f64, u64, bool)> = [1e-6, 1e-8, 1e-10]
        .iter()
        .flat_map(|&d| (1..=20u64).flat_map(move |s| [(d, s, true), (d, s, false)]))
        .collect();
    let failures: Vec<String> = jobs
        .par_iter()
        .flat_map_iter(|&(d, s, normal)| {
            let setup = if normal { fig3_setup(100, d, PI, 16, s) } else { fig6_setup(100, d, PI, 16, s) }.unwrap();
            let trace = traced_run(&setup, IterationVariant::PlainQr, 1, 0.0, "k1", s).unwrap();
            let rec = trace.record(1).unwrap();
            let mut bad = Vec::new();
            for name in ["kappa_x1_upper", "kappa_x1_lower_relaxed"] {
                match rec.check(name) {
                    Some(c) if c.satisfied && !c.inconclusive => {}
                    other => bad.push(format!("{name} d={d:e} seed={s} normal={normal}: {other:?}")),
                }
            }
            bad
        })
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
}
