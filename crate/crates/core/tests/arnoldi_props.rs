use proptest::prelude::*;
use ratsi::arnoldi::{arnoldi_step, run_arnoldi, ArnoldiState, RestartMode, RestartSource, AUTO_RESTART_THRESHOLD};
use ratsi::harness::experiments::{arnoldi_record, custom_spectrum, fig1_setup, DANGER_POLE};
use ratsi::linalg::qr::orthogonality_defect;
use ratsi::linalg::random::random_orthonormal;
use ratsi::linalg::{norm2, re, spectral_norm, C64};
use ratsi::spectrum::make_normal;
use std::f64::consts::PI;

const U: f64 = f64::EPSILON;

/// Dangerous target index and the target nearest to it.
fn pair(setup: &ratsi::harness::experiments::Setup) -> (usize, usize) {
    let t = setup.targets();
    let di = setup.tm.spectrum.danger[0].index;
    let si = (0..t.len())
        .filter(|&i| i != di)
        .min_by(|&i, &j| (t[i] - t[di]).norm().total_cmp(&(t[j] - t[di]).norm()))
        .unwrap();
    (di, si)
}

fn log_d(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.log10()..hi.log10()).prop_map(|e| 10f64.powf(e))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn basis_stays_orthonormal(d in log_d(1e-14, 1e-2), seed in 1u64..1000, restart in any::<bool>()) {
        let setup = fig1_setup(60, d, PI, 1, seed).unwrap();
        let mode = if restart { RestartMode::After2 } else { RestartMode::Off };
        let run = run_arnoldi(&setup.tm.a, re(DANGER_POLE), setup.q0.col(0), 20, mode, AUTO_RESTART_THRESHOLD).unwrap();
        for st in &run.states {
            prop_assert!(orthogonality_defect(&st.basis) <= 1e-12);
        }
    }

    #[test]
    fn two_vector_basis_contains_the_dangerous_direction(d in log_d(1e-13, 1e-4), seed in 1u64..1000) {
        let setup = fig1_setup(60, d, PI, 1, seed).unwrap();
        let (di, _) = pair(&setup);
        let state = ArnoldiState::new(setup.q0.col(0), re(DANGER_POLE)).unwrap();
        let state = arnoldi_step(&setup.tm.a, re(DANGER_POLE), &state).unwrap();
        let q = &state.basis;
        let v = setup.tm.v.col(di);
        let coeffs = q.adjoint_matvec(v);
        let proj = q.matvec(&coeffs);
        let err: Vec<C64> = v.iter().zip(&proj).map(|(a, b)| a - b).collect();
        prop_assert!(norm2(&err) <= 1e3 * d, "error {:e} at d = {d:e}", norm2(&err));
        // For normal A, ||H_1|| >= ||s(A) q_1|| >= |v_1^* q_1| / d.
        let h = state.hessenberg().unwrap();
        let overlap = ratsi::linalg::dot(v, setup.q0.col(0)).norm();
        // The eigenvalue of the assembled A sits within O(u ||A||) of 10 + d.
        let d_eff = d + 10.0 * U * setup.tm.a.norm_fro();
        prop_assert!(h.norm_fro() >= overlap / d_eff, "{:e} < {:e}", h.norm_fro(), overlap / d_eff);
    }

    #[test]
    fn without_restart_the_second_pair_stagnates(d in prop::sample::select(vec![1e-12, 1e-10, 1e-8]), seed in 1u64..50) {
        let setup = fig1_setup(100, d, PI, 1, seed).unwrap();
        let (di, si) = pair(&setup);
        let t = setup.targets();
        let rec = arnoldi_record(&setup, 25, RestartMode::Off, &[t[di], t[si]], "off").unwrap();
        for table in [&rec.hessenberg, &rec.rayleigh_ritz] {
            let floor = table.iter().map(|r| r[1]).filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
            prop_assert!(floor >= 5e-4 * U / d, "floor {floor:e} at d = {d:e}");
        }
    }

    #[test]
    fn restart_recovers_every_target(seed in 1u64..50) {
        let setup = fig1_setup(100, 1e-12, PI, 1, seed).unwrap();
        let targets = setup.targets().to_vec();
        let rec = arnoldi_record(&setup, 25, RestartMode::After2, &targets, "after2").unwrap();
        let norm_a = spectral_norm(&setup.tm.a).unwrap();
        for table in [&rec.hessenberg, &rec.rayleigh_ritz] {
            let worst = table.last().unwrap().iter().cloned().fold(0.0, f64::max);
            prop_assert!(worst <= 1e-12 * norm_a, "{worst:e}");
        }
    }
}

#[test]
fn restart_makes_later_vectors_orthogonal_to_the_dangerous_direction() {
    let d = 1e-12;
    let setup = fig1_setup(100, d, PI, 1, 1).unwrap();
    let (di, _) = pair(&setup);
    let run = run_arnoldi(&setup.tm.a, re(DANGER_POLE), setup.q0.col(0), 10, RestartMode::After2, AUTO_RESTART_THRESHOLD).unwrap();
    let basis = &run.last().basis;
    let v = setup.tm.v.col(di);
    for j in 1..basis.cols() {
        let overlap = ratsi::linalg::dot(v, basis.col(j)).norm();
        assert!(overlap <= 1e3 * d, "column {j}: {overlap:e}");
    }
}

#[test]
fn auto_restart_leaves_a_harmless_run_alone() {
    let spec = custom_spectrum(60, 6, Some(0.05), PI, 3).unwrap();
    let tm = make_normal(&spec, 3).unwrap();
    let q1 = random_orthonormal(60, 1, 5, false);
    let off = run_arnoldi(&tm.a, re(DANGER_POLE), q1.col(0), 12, RestartMode::Off, AUTO_RESTART_THRESHOLD).unwrap();
    let auto = run_arnoldi(&tm.a, re(DANGER_POLE), q1.col(0), 12, RestartMode::Auto, AUTO_RESTART_THRESHOLD).unwrap();
    assert!(matches!(auto.restart_log()[0].source, RestartSource::BelowThreshold { .. }));
    assert_eq!(off.last().basis.as_slice(), auto.last().basis.as_slice());
}
