use proptest::prelude::*;
use ratsi::filter::{apply_filter, filter_profile, NodePlacement, RationalFilter};
use ratsi::harness::experiments::{custom_spectrum, danger_circle, fig3_spectrum};
use ratsi::linalg::random::gaussian_matrix;
use ratsi::linalg::{c, re, ComplexMatrix, C64};
use ratsi::spectrum::make_normal;
use std::f64::consts::PI;

/// A point at `|lambda - center| = t * radius`, angle `phi`.
fn around(center: C64, radius: f64, t: f64, phi: f64) -> C64 {
    center + C64::from_polar(t * radius, phi)
}

/// Rounding scale of the node sum: `|r|` when the terms do not cancel, the
/// majorant when they do (outside the circle, where `|r| ~ t^-ell`).
fn scale(f: &RationalFilter, l: C64, closed: C64) -> f64 {
    closed.norm().max(f.eval_majorant(l).unwrap())
}

fn off_circle() -> impl Strategy<Value = f64> {
    prop_oneof![0.05f64..0.9, 1.1f64..3.0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn diagonal_filter_matches_scalar_values(
        ell in 2usize..20,
        n in 2usize..12,
        ts in prop::collection::vec((0.1f64..0.9, 0.0f64..(2.0 * PI)), 12),
        seed in any::<u32>(),
    ) {
        let center = c(1.0, -0.5);
        let f = RationalFilter::circle(center, 2.0, ell).unwrap();
        let lambdas: Vec<C64> = ts[..n].iter().map(|&(t, p)| around(center, 2.0, t, p)).collect();
        let a = ComplexMatrix::from_diag(&lambdas);
        let q = gaussian_matrix(n, 3, seed as u64, true);
        let y = apply_filter(&f, &a, &q).unwrap();
        for (i, &l) in lambdas.iter().enumerate() {
            let r = f.eval_scalar(l).unwrap();
            for j in 0..3 {
                let want = r * q[(i, j)];
                prop_assert!((y[(i, j)] - want).norm() <= 1e-13 * want.norm(), "row {i} col {j}");
            }
        }
    }

    #[test]
    fn filter_application_is_linear(ell in prop::sample::select(vec![2usize, 4, 8, 16]), seed in any::<u32>()) {
        let seed = seed as u64;
        let spec = custom_spectrum(30, 5, None, PI, seed).unwrap();
        let tm = make_normal(&spec, seed).unwrap();
        let f = danger_circle(ell).unwrap();
        let q1 = gaussian_matrix(30, 5, seed + 1, true);
        let q2 = gaussian_matrix(30, 5, seed + 2, true).scale(re(1e3));
        let y1 = apply_filter(&f, &tm.a, &q1).unwrap();
        let y2 = apply_filter(&f, &tm.a, &q2).unwrap();
        let y12 = apply_filter(&f, &tm.a, &q1.add(&q2)).unwrap();
        let defect = y12.sub(&y1).sub(&y2).norm_fro();
        prop_assert!(defect <= 1e-12 * (y1.norm_fro() + y2.norm_fro()));
    }

    #[test]
    fn endpoint_circle_matches_geometric_closed_form(
        ell in 2usize..40,
        t in off_circle(),
        phi in 0.0f64..(2.0 * PI),
        radius in 0.1f64..10.0,
    ) {
        let center = c(-2.0, 3.0);
        let f = RationalFilter::circle_with(center, radius, ell, NodePlacement::Endpoint).unwrap();
        let l = around(center, radius, t, phi);
        let w = (l - center) / radius;
        let closed = re(1.0) / (re(1.0) - w.powu(ell as u32));
        let r = f.eval_scalar(l).unwrap();
        prop_assert!((r - closed).norm() <= 1e-12 * scale(&f, l, closed), "{r} vs {closed}");
    }

    #[test]
    fn half_step_circle_matches_its_closed_form(
        ell in 2usize..40,
        t in off_circle(),
        phi in 0.0f64..(2.0 * PI),
    ) {
        let f = RationalFilter::circle_with(re(0.0), 1.0, ell, NodePlacement::HalfStep).unwrap();
        let l = C64::from_polar(t, phi);
        let closed = re(1.0) / (re(1.0) + l.powu(ell as u32));
        let r = f.eval_scalar(l).unwrap();
        prop_assert!((r - closed).norm() <= 1e-12 * scale(&f, l, closed));
    }

    #[test]
    fn majorant_dominates_scalar_value(
        nodes in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -2.0f64..2.0, -2.0f64..2.0), 1..10),
        lr in -6.0f64..6.0,
        li in -6.0f64..6.0,
    ) {
        let (z, w): (Vec<C64>, Vec<C64>) = nodes.iter().map(|&(a, b, x, y)| (c(a, b), c(x, y))).unzip();
        let l = c(lr, li);
        prop_assume!(z.iter().all(|&zj| (zj - l).norm() > 1e-6));
        let f = RationalFilter::new(z, w).unwrap();
        let r = f.eval_scalar(l).unwrap().norm();
        let m = f.eval_majorant(l).unwrap();
        prop_assert!(m >= r * (1.0 - 1e-14));
    }
}

#[test]
fn near_pole_terms_cancel_in_the_majorant_ratio() {
    let f = danger_circle(16).unwrap();
    let mut ratios = Vec::new();
    for d in [1e-6, 1e-10, 1e-13] {
        let spec = fig3_spectrum(100, d, PI, 1).unwrap();
        let p = filter_profile(&f, &spec).unwrap();
        ratios.push(p.target_majorant_ratio());
    }
    for r in &ratios {
        assert!(*r <= 10.0, "{ratios:?}");
    }
    let spread = ratios.iter().cloned().fold(0.0, f64::max) / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 2.0, "{ratios:?}");
}
