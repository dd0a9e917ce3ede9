use proptest::prelude::*;
use ratsi::harness::experiments::{custom_spectrum, danger_circle, fig3_setup, traced_run, Setup};
use ratsi::linalg::random::{gaussian_matrix, random_orthonormal};
use ratsi::spectrum::{make_normal, SpectrumSpec};
use ratsi::subspace::{rayleigh_ritz, IterationVariant};
use std::f64::consts::PI;

fn clean_setup(ell: usize, seed: u64) -> Setup {
    let spec = custom_spectrum(80, 8, None, PI, seed).unwrap();
    let tm = make_normal(&spec, seed).unwrap();
    Setup {
        q0: random_orthonormal(80, 8, seed + 2, false),
        tm,
        filter: danger_circle(ell).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn clean_runs_contract_by_rho_every_step(ell in prop::sample::select(vec![4usize, 6, 8]), seed in 1u64..500) {
        let setup = clean_setup(ell, seed);
        let trace = traced_run(&setup, IterationVariant::PlainQr, 5, 0.0, "clean", seed).unwrap();
        let mut conclusive = 0;
        for (k, c) in trace.checks().filter(|(_, c)| c.name == "one_step_contraction") {
            prop_assert!(c.satisfied, "k = {k}: {:e} > {:e}", c.lhs, c.rhs);
            conclusive += usize::from(!c.inconclusive);
        }
        prop_assert!(conclusive >= 2, "only {conclusive} steps above the rounding floor");
    }

    #[test]
    fn perturbed_bound_holds_from_the_second_step(seed in 1u64..500) {
        let setup = fig3_setup(100, 1e-10, PI, 16, seed).unwrap();
        let trace = traced_run(&setup, IterationVariant::PlainQr, 4, 0.0, "danger", seed).unwrap();
        let mut seen = 0;
        for (k, c) in trace.checks().filter(|(k, c)| *k >= 2 && c.name == "perturbed_one_step") {
            prop_assert!(c.inconclusive || c.satisfied, "k = {k}: {:e} > {:e}", c.lhs, c.rhs);
            seen += 1;
        }
        prop_assert!(seen == 3);
    }

    #[test]
    fn ritz_values_of_symmetric_matrices_stay_in_the_eigenvalue_hull(
        eigs in prop::collection::vec(-20.0f64..20.0, 6..30),
        m in 1usize..6,
        seed in any::<u32>(),
    ) {
        let seed = seed as u64;
        let n = eigs.len();
        let spec = SpectrumSpec::new(vec![ratsi::linalg::re(eigs[0])], eigs[1..].iter().map(|&x| ratsi::linalg::re(x)).collect()).unwrap();
        let tm = make_normal(&spec, seed).unwrap();
        let q = ratsi::linalg::orth(&gaussian_matrix(n, m.min(n), seed + 1, true)).unwrap();
        let ritz = rayleigh_ritz(&tm.a, &q, None).unwrap();
        let lo = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in &ritz.values {
            prop_assert!(v.im.abs() <= 1e-10);
            prop_assert!(v.re >= lo - 1e-10 && v.re <= hi + 1e-10, "{v} outside [{lo}, {hi}]");
        }
    }
}

#[test]
fn second_iterate_is_one_column_scaling_from_well_conditioned() {
    let setup = fig3_setup(100, 1e-10, PI, 16, 1).unwrap();
    let trace = traced_run(&setup, IterationVariant::PlainQr, 2, 0.0, "fig3", 1).unwrap();
    let k1 = trace.record(1).unwrap();
    let k2 = trace.record(2).unwrap();
    assert!(k1.kappa_x >= 1e8, "{:e}", k1.kappa_x);
    assert!(k2.kappa_x_t <= 1e3, "{:e}", k2.kappa_x_t);
    assert!(k2.check("twice_enough").is_some_and(|c| c.satisfied));
}
