//! Builds and runs each reproduction experiment and writes its artifacts.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::config::{Experiment, ExperimentConfig, Overrides};
use crate::arnoldi::{extract_hessenberg, extract_rayleigh_ritz, run_arnoldi, ArnoldiRun, RestartMode, AUTO_RESTART_THRESHOLD};
use crate::diagnostics::{build_trace, CoordinateDecomposition, CoordinateGroup, IterationTrace, TraceMeta};
use crate::error::{Error, Result};
use crate::filter::{NodePlacement, RationalFilter};
use crate::linalg::random::random_orthonormal;
use crate::linalg::{re, spectral_norm, ComplexMatrix, C64};
use crate::phi::{envelope_bound, fit_params_from_trace, fixed_points, iterate_phi, overlay, PhiParams};
use crate::spectrum::{make_nonnormal, make_normal, place_danger, uniform_cluster, SpectrumSpec, TestMatrix};
use crate::subspace::{matched_residuals, run_fsi, IterationVariant, RitzPairs};

/// Pole every dangerous eigenvalue is placed next to.
pub const DANGER_POLE: f64 = 10.0;
pub const CIRCLE_CENTER: f64 = 12.5;
pub const CIRCLE_RADIUS: f64 = 2.5;
/// Eigenvector condition number of the non-normal experiment.
pub const NONNORMAL_KAPPA: f64 = 100.0;
/// Residual level treated as converged, relative to `||A||`.
pub const CONVERGED_RTOL: f64 = 1e-12;

/// Seeds derived from the configuration seed.
#[derive(Debug, Clone, Copy)]
pub struct Seeds {
    pub matrix: u64,
    pub cluster: u64,
    pub start: u64,
}

impl Seeds {
    pub fn from(seed: u64) -> Self {
        Seeds {
            matrix: seed,
            cluster: seed.wrapping_add(6),
            start: seed.wrapping_add(2),
        }
    }
}

/// Matrix, filter and starting block of one subspace-iteration run.
#[derive(Debug, Clone)]
pub struct Setup {
    pub tm: TestMatrix,
    pub filter: RationalFilter,
    pub q0: ComplexMatrix,
}

impl Setup {
    pub fn targets(&self) -> &[C64] {
        &self.tm.spectrum.target
    }
}

/// Circle filter through `[10, 15]` with a node at `z = 10`, scaled so that
/// node has unit weight.
pub fn danger_circle(ell: usize) -> Result<RationalFilter> {
    let f = RationalFilter::circle_with(re(CIRCLE_CENTER), CIRCLE_RADIUS, ell, NodePlacement::Endpoint)?;
    f.normalize_at_pole(f.nearest_node(re(DANGER_POLE)))
}

fn with_danger(targets: Vec<C64>, unwanted: Vec<C64>, d: Option<f64>, theta: f64, copies: usize) -> Result<SpectrumSpec> {
    let mut spec = SpectrumSpec::new(targets, unwanted)?;
    if let Some(d) = d {
        for _ in 0..copies {
            spec = place_danger(&spec, re(DANGER_POLE), d, theta, None)?;
        }
    }
    Ok(spec)
}

/// Nine targets `10.5, 11, ..., 14.5`, the dangerous one at `10 + d`, and
/// `n - 10` unwanted eigenvalues in `[0, 5]`.
pub fn fig3_spectrum(n: usize, d: f64, theta: f64, seed: u64) -> Result<SpectrumSpec> {
    let t = (1..10).map(|i| re(10.0 + 0.5 * i as f64)).collect();
    with_danger(t, uniform_cluster(n - 10, 0.0, 5.0, Seeds::from(seed).cluster), Some(d), theta, 1)
}

/// Targets `10.1, ..., 10.9` next to the dangerous one at `10 + d`.
pub fn fig1_spectrum(n: usize, d: f64, theta: f64, seed: u64) -> Result<SpectrumSpec> {
    let t = (1..10).map(|i| re(10.0 + 0.1 * i as f64)).collect();
    with_danger(t, uniform_cluster(n - 10, 0.0, 5.0, Seeds::from(seed).cluster), Some(d), theta, 1)
}

/// One regular target at 11 and the dangerous one at `10 + d`.
pub fn fig2_spectrum(n: usize, d: f64, theta: f64, seed: u64) -> Result<SpectrumSpec> {
    with_danger(vec![re(11.0)], uniform_cluster(n - 2, 0.0, 5.0, Seeds::from(seed).cluster), Some(d), theta, 1)
}

/// `10 + 10^-i` for `i = 0..=12` and two copies of `10 + d`.
pub fn fig8_spectrum(n: usize, d: f64, theta: f64, seed: u64) -> Result<SpectrumSpec> {
    let t = (0..13).map(|i| re(10.0 + 10f64.powi(-i))).collect();
    with_danger(t, uniform_cluster(n - 15, 0.0, 5.0, Seeds::from(seed).cluster), Some(d), theta, 2)
}

/// `m` targets spread over `(10, 15)`; with `d`, the first becomes `10 + d`.
pub fn custom_spectrum(n: usize, m: usize, d: Option<f64>, theta: f64, seed: u64) -> Result<SpectrumSpec> {
    let regular = if d.is_some() { m - 1 } else { m };
    let t = (0..regular)
        .map(|i| re(10.0 + 5.0 * (i + 1) as f64 / (regular + 1) as f64))
        .collect();
    with_danger(t, uniform_cluster(n - m, 0.0, 5.0, Seeds::from(seed).cluster), d, theta, 1)
}

/// Resolved knobs after applying overrides to the experiment defaults.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub d: Option<f64>,
    pub theta: f64,
    pub ell: usize,
    pub m: usize,
    pub n: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub variant: IterationVariant,
    pub restart_mode: RestartMode,
}

impl Resolved {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        let e = cfg.experiment;
        let o: &Overrides = &cfg.overrides;
        let default_d = match e {
            Experiment::Fig1Arnoldi | Experiment::Fig1Fsi | Experiment::Fig7Restart => Some(1e-12),
            Experiment::Fig2QuadratureRefine | Experiment::Fig2IterationRefine | Experiment::Fig35NormalDanger => Some(1e-10),
            Experiment::Fig6Nonnormal | Experiment::Fig8MultiDanger => Some(1e-13),
            Experiment::Fig6Phi | Experiment::Custom => None,
        };
        let default_ell = match e {
            Experiment::Fig1Arnoldi | Experiment::Fig1Fsi | Experiment::Fig7Restart | Experiment::Fig6Phi => 1,
            Experiment::Fig2IterationRefine | Experiment::Custom => 8,
            Experiment::Fig8MultiDanger => 32,
            _ => 16,
        };
        let default_iters = match e {
            Experiment::Fig1Arnoldi | Experiment::Fig1Fsi | Experiment::Fig7Restart => 25,
            Experiment::Fig2QuadratureRefine => 1,
            Experiment::Fig2IterationRefine => 12,
            Experiment::Fig35NormalDanger => 6,
            Experiment::Fig6Nonnormal => 10,
            Experiment::Fig6Phi => 14,
            Experiment::Fig8MultiDanger => 3,
            Experiment::Custom => 8,
        };
        Resolved {
            d: o.d.or(default_d),
            theta: o.theta.unwrap_or(PI),
            ell: o.ell.unwrap_or(default_ell),
            m: o.m.unwrap_or(e.target_count()),
            n: o.n.unwrap_or(e.default_n()),
            max_iters: o.max_iters.unwrap_or(default_iters),
            tol: o.tol.unwrap_or(0.0),
            variant: o.variant.unwrap_or(IterationVariant::PlainQr),
            restart_mode: o.restart_mode.unwrap_or(match e {
                Experiment::Fig7Restart => RestartMode::After2,
                _ => RestartMode::Off,
            }),
        }
    }

    fn d(&self) -> f64 {
        self.d.expect("experiment places a dangerous eigenvalue")
    }
}

/// Passed/failed/inconclusive counts of one bound check.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CheckTally {
    pub passed: usize,
    pub failed: usize,
    pub inconclusive: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: Experiment,
    pub seed: u64,
    pub overrides: Overrides,
    pub metrics: BTreeMap<String, f64>,
    pub series: BTreeMap<String, Vec<f64>>,
    pub checks: BTreeMap<String, CheckTally>,
    pub notes: Vec<String>,
}

impl Summary {
    fn new(cfg: &ExperimentConfig) -> Self {
        Summary {
            experiment: cfg.experiment,
            seed: cfg.seed,
            overrides: cfg.overrides.clone(),
            metrics: BTreeMap::new(),
            series: BTreeMap::new(),
            checks: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn metric(&mut self, key: impl Into<String>, v: f64) {
        self.metrics.insert(key.into(), v);
    }

    fn series(&mut self, key: impl Into<String>, v: Vec<f64>) {
        self.series.insert(key.into(), v);
    }

    fn tally(&mut self, trace: &IterationTrace) {
        for (_, c) in trace.checks() {
            let t = self.checks.entry(c.name.clone()).or_default();
            if c.inconclusive {
                t.inconclusive += 1;
            } else if c.satisfied {
                t.passed += 1;
            } else {
                t.failed += 1;
            }
        }
    }

    pub fn get(&self, key: &str) -> Result<f64> {
        self.metrics
            .get(key)
            .copied()
            .ok_or_else(|| Error::MissingDiagnostics(format!("metric '{key}'")))
    }

    pub fn get_series(&self, key: &str) -> Result<&[f64]> {
        self.series
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingDiagnostics(format!("series '{key}'")))
    }
}

/// Whitespace-separated table with a `#` header line.
#[derive(Debug, Clone)]
pub struct DataFile {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DataFile {
    fn new(name: &str, columns: &[&str]) -> Self {
        DataFile {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = format!("# {}\n", self.columns.join(" "));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| if v.is_finite() { format!("{v:.16e}") } else { "NaN".into() }).collect();
            let _ = writeln!(s, "{}", cells.join(" "));
        }
        s
    }
}

/// Arnoldi residual history for one run.
#[derive(Debug, Clone)]
pub struct ArnoldiRecord {
    pub label: String,
    pub run: ArnoldiRun,
    /// `[step][target]` residuals, NaN while too few Ritz pairs exist.
    pub hessenberg: Vec<Vec<f64>>,
    pub rayleigh_ritz: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub summary: Summary,
    /// Subspace-iteration traces; the first is written as `trace.csv`.
    pub traces: Vec<IterationTrace>,
    pub arnoldi: Vec<ArnoldiRecord>,
    pub data: Vec<DataFile>,
}

impl ExperimentOutput {
    /// Writes `trace.csv`, `summary.json` and every data file into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, t) in self.traces.iter().enumerate() {
            let name = if i == 0 { "trace.csv".to_string() } else { format!("trace_{}.csv", t.meta.label) };
            t.write_csv(&dir.join(name))?;
        }
        if !self.arnoldi.is_empty() {
            write_arnoldi_csv(&dir.join("arnoldi_trace.csv"), &self.arnoldi)?;
        }
        let mut summary = serde_json::to_string_pretty(&self.summary)?;
        summary.push('\n');
        std::fs::write(dir.join("summary.json"), summary)?;
        for df in &self.data {
            std::fs::write(dir.join(&df.name), df.render())?;
        }
        Ok(())
    }
}

fn write_arnoldi_csv(path: &Path, records: &[ArnoldiRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run", "step", "extraction", "pair_index", "residual"])?;
    for rec in records {
        for (name, table) in [("hessenberg", &rec.hessenberg), ("rayleigh_ritz", &rec.rayleigh_ritz)] {
            for (s, row) in table.iter().enumerate() {
                for (i, r) in row.iter().enumerate() {
                    w.write_record([
                        rec.label.clone(),
                        (s + 1).to_string(),
                        name.to_string(),
                        i.to_string(),
                        if r.is_finite() { format!("{r:e}") } else { String::new() },
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs the configured experiment. Deterministic for a fixed configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let out = match cfg.experiment {
        Experiment::Fig1Arnoldi => fig1_arnoldi(cfg),
        Experiment::Fig1Fsi => fig1_fsi(cfg),
        Experiment::Fig2QuadratureRefine => fig2_quadrature(cfg),
        Experiment::Fig2IterationRefine => fig2_iteration(cfg),
        Experiment::Fig35NormalDanger => fig3_5(cfg),
        Experiment::Fig6Nonnormal => fig6_nonnormal(cfg),
        Experiment::Fig6Phi => fig6_phi(cfg),
        Experiment::Fig7Restart => fig7_restart(cfg),
        Experiment::Fig8MultiDanger => fig8(cfg),
        Experiment::Custom => custom(cfg),
    };
    out.map_err(|e| e.context(format!("experiment {}", cfg.experiment)))
}

/// Runs and writes the artifacts into `dir`.
pub fn run_experiment_to(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutput> {
    let out = run_experiment(cfg)?;
    out.write(dir)?;
    Ok(out)
}

fn normal_setup(spec: &SpectrumSpec, filter: RationalFilter, m: usize, seed: u64) -> Result<Setup> {
    let s = Seeds::from(seed);
    let tm = make_normal(spec, s.matrix)?;
    let q0 = random_orthonormal(tm.n(), m, s.start, false);
    Ok(Setup { tm, filter, q0 })
}

/// Setup of `fig3_5_normal_danger`: normal matrix, `ell`-node circle filter.
pub fn fig3_setup(n: usize, d: f64, theta: f64, ell: usize, seed: u64) -> Result<Setup> {
    normal_setup(&fig3_spectrum(n, d, theta, seed)?, danger_circle(ell)?, 10, seed)
}

/// Setup of `fig6_nonnormal`: non-normal matrix with `kappa(V) = 100`.
pub fn fig6_setup(n: usize, d: f64, theta: f64, ell: usize, seed: u64) -> Result<Setup> {
    let s = Seeds::from(seed);
    let tm = make_nonnormal(&fig3_spectrum(n, d, theta, seed)?, NONNORMAL_KAPPA, s.matrix)?;
    let q0 = random_orthonormal(tm.n(), 10, s.start, false);
    Ok(Setup {
        tm,
        filter: danger_circle(ell)?,
        q0,
    })
}

/// The `fig1_*` matrix with the shift-and-invert filter at `z = 10`.
pub fn fig1_setup(n: usize, d: f64, theta: f64, m: usize, seed: u64) -> Result<Setup> {
    normal_setup(&fig1_spectrum(n, d, theta, seed)?, RationalFilter::shift_invert(re(DANGER_POLE)), m, seed)
}

pub fn fig2_setup(n: usize, d: f64, theta: f64, ell: usize, m: usize, seed: u64) -> Result<Setup> {
    normal_setup(&fig2_spectrum(n, d, theta, seed)?, danger_circle(ell)?, m, seed)
}

pub fn fig8_setup(n: usize, d: f64, theta: f64, ell: usize, m: usize, seed: u64) -> Result<Setup> {
    normal_setup(&fig8_spectrum(n, d, theta, seed)?, danger_circle(ell)?, m, seed)
}

/// Runs subspace iteration on a setup and measures it.
pub fn traced_run(setup: &Setup, variant: IterationVariant, iters: usize, tol: f64, label: &str, seed: u64) -> Result<IterationTrace> {
    let run = run_fsi(variant, &setup.tm.a, &setup.filter, &setup.q0, iters, tol)?;
    let meta = TraceMeta {
        label: label.to_string(),
        seed,
        d: setup.tm.spectrum.min_danger_distance(),
        ell: setup.filter.len(),
        variant: variant.name().to_string(),
        n: setup.tm.n(),
        m: setup.q0.cols(),
    };
    build_trace(&run, &setup.tm, &setup.filter, meta)
}

/// Index of the dangerous target and of the non-dangerous target closest to the pole.
fn danger_and_second(tm: &TestMatrix) -> (usize, usize) {
    let danger = tm.spectrum.danger.first().map(|r| r.index).unwrap_or(0);
    let second = (0..tm.m())
        .filter(|&i| tm.spectrum.danger.iter().all(|r| r.index != i))
        .min_by(|&i, &j| {
            let di = (tm.spectrum.target[i] - re(DANGER_POLE)).norm();
            let dj = (tm.spectrum.target[j] - re(DANGER_POLE)).norm();
            di.total_cmp(&dj)
        })
        .unwrap_or(danger);
    (danger, second)
}

fn column(trace: &IterationTrace, i: usize) -> Vec<f64> {
    trace.records.iter().map(|r| r.residuals[i]).collect()
}

/// Geometric mean of consecutive ratios up to and including the first
/// value at or below `floor`. `None` with fewer than two values.
pub fn geometric_rate(series: &[f64], floor: f64) -> Option<f64> {
    let end = series.iter().position(|&v| v <= floor).map(|p| p + 1).unwrap_or(series.len());
    let s = &series[..end];
    if s.len() < 2 || !(s[0] > 0.0) {
        return None;
    }
    Some((s[s.len() - 1] / s[0]).powf(1.0 / (s.len() - 1) as f64))
}

/// Consecutive ratios `s[k+1]/s[k]` while `s[k]` is above `floor`.
pub fn step_factors(series: &[f64], floor: f64) -> Vec<f64> {
    series
        .windows(2)
        .take_while(|w| w[0] > floor)
        .map(|w| w[1] / w[0])
        .collect()
}

/// First 1-based index with `series[k-1] <= level`.
pub fn first_below(series: &[f64], level: f64) -> Option<usize> {
    series.iter().position(|&v| v <= level).map(|p| p + 1)
}

/// Pearson correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn coord_file(name: &str, c: &CoordinateDecomposition, last: usize) -> DataFile {
    let mut df = DataFile::new(name, &["i", "group", "col1", "col_last"]);
    for i in 0..c.magnitudes[0].len() {
        let g = if c.danger.contains(&i) {
            0.0
        } else if c.target.contains(&i) {
            1.0
        } else {
            2.0
        };
        df.push(vec![i as f64, g, c.magnitudes[0][i], c.magnitudes[last][i]]);
    }
    df
}

fn residual_file(name: &str, trace: &IterationTrace, targets: &[C64]) -> DataFile {
    let mut cols = vec!["i".to_string(), "lambda".to_string()];
    cols.extend(trace.records.iter().map(|r| format!("res_k{}", r.k)));
    let mut df = DataFile {
        name: name.to_string(),
        columns: cols,
        rows: Vec::new(),
    };
    for (i, t) in targets.iter().enumerate() {
        let mut row = vec![i as f64, t.re];
        row.extend(trace.records.iter().map(|r| r.residuals[i]));
        df.push(row);
    }
    df
}

fn fig3_5(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let r = Resolved::of(cfg);
    let setup = fig3_setup(r.n, r.d(), r.theta, r.ell, cfg.seed)?;
    let trace = traced_run(&setup, r.variant, r.max_iters.max(2), r.tol, cfg.experiment.name(), cfg.seed)?;
    let mut s = Summary::new(cfg);
    s.tally(&trace);
    let (danger, _) = danger_and_second(&setup.tm);
    let m = setup.q0.cols();
    let k1 = trace.record(1).expect("first iteration");
    let others: Vec<f64> = (0..m).filter(|&i| i != danger).map(|i| k1.residuals[i]).collect();
    s.metric("norm_a", trace.norm_a);
    s.metric("rho", trace.rho);
    s.metric("k1_danger_residual", k1.residuals[danger]);
    s.metric("k1_other_min", others.iter().cloned().fold(f64::INFINITY, f64::min));
    s.metric("k1_other_max", others.iter().cloned().fold(0.0, f64::max));
    s.metric("kappa_x1", k1.kappa_x);
    s.metric("q1_col1_unwanted_max", k1.coords_basis.group_max(0, CoordinateGroup::Unwanted));
    s.metric("q1_col_last_unwanted_max", k1.coords_basis.group_max(m - 1, CoordinateGroup::Unwanted));
    let mut data = vec![
        residual_file("fig4_residuals.dat", &trace, setup.targets()),
        coord_file("fig4_coords_q1.dat", &k1.coords_basis, m - 1),
    ];
    if let Some(k2) = trace.record(2) {
        s.metric("k2_max_residual", k2.max_residual);
        s.metric("kappa_x2t", k2.kappa_x_t);
        s.metric("q2_col_last_unwanted_max", k2.coords_basis.group_max(m - 1, CoordinateGroup::Unwanted));
        data.push(coord_file("fig5_coords_q2.dat", &k2.coords_basis, m - 1));
        data.push(coord_file("fig5_coords_x2.dat", &k2.coords_iterate, m - 1));
    }
    s.series("max_residual", trace.max_residuals());
    s.series("tan_theta1", trace.records.iter().map(|r| r.tan_theta1).collect());
    match fit_params_from_trace(&trace).and_then(|p| overlay(&trace, &p).map(|o| (p, o))) {
        Ok((p, ov)) => {
            s.metric("phi_eps1", p.eps1);
            s.metric("phi_eps2", p.eps2);
            let mut df = DataFile::new("fig3_phi_overlay.dat", &["k", "tan_measured", "phi_k"]);
            for (k, t, phi) in ov {
                df.push(vec![k as f64, t, phi]);
            }
            data.push(df);
        }
        Err(e) => s.notes.push(format!("no Phi overlay: {e}")),
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        summary: s,
        traces: vec![trace],
        arnoldi: Vec::new(),
        data,
    })
}

fn fig1_fsi(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let r = Resolved::of(cfg);
    let setup = fig1_setup(r.n, r.d(), r.theta, r.m, cfg.seed)?;
    let trace = traced_run(&setup, r.variant, r.max_iters, r.tol, cfg.experiment.name(), cfg.seed)?;
    let (danger, second) = danger_and_second(&setup.tm);
    let mut s = Summary::new(cfg);
    s.tally(&trace);
    let r1 = column(&trace, danger);
    let r2 = column(&trace, second);
    let mut df = DataFile::new("fig1_fsi.dat", &["k", "res_danger", "res_second"]);
    for (k, (a, b)) in r1.iter().zip(&r2).enumerate() {
        df.push(vec![(k + 1) as f64, *a, *b]);
    }
    s.metric("norm_a", trace.norm_a);
    s.metric("rho", trace.rho);
    s.series("res_danger", r1);
    s.series("res_second", r2);
    s.series("max_residual", trace.max_residuals());
    Ok(ExperimentOutput {
        config: cfg.clone(),
        summary: s,
        traces: vec![trace],
        arnoldi: Vec::new(),
        data: vec![df],
    })
}

fn arnoldi_residuals(tm: &TestMatrix, run: &ArnoldiRun, targets: &[C64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let nan = vec![f64::NAN; targets.len()];
    let matched = |pairs: Result<RitzPairs>| -> Result<Vec<f64>> {
        let p = pairs?;
        if p.len() < targets.len() {
            return Ok(nan.clone());
        }
        matched_residuals(&p, targets)
    };
    let mut hess = Vec::new();
    let mut rr = Vec::new();
    for st in &run.states {
        hess.push(if st.k() >= 1 { matched(extract_hessenberg(&tm.a, st))? } else { nan.clone() });
        rr.push(matched(extract_rayleigh_ritz(&tm.a, st))?);
    }
    Ok((hess, rr))
}

/// Arnoldi from the first column of the seeded start block.
pub fn arnoldi_record(setup: &Setup, steps: usize, mode: RestartMode, targets: &[C64], label: &str) -> Result<ArnoldiRecord> {
    let run = run_arnoldi(&setup.tm.a, re(DANGER_POLE), setup.q0.col(0), steps, mode, AUTO_RESTART_THRESHOLD)?;
    let (hessenberg, rayleigh_ritz) = arnoldi_residuals(&setup.tm, &run, targets)?;
    Ok(ArnoldiRecord {
        label: label.to_string(),
        run,
        hessenberg,
        rayleigh_ritz,
    })
}

fn pick(table: &[Vec<f64>], i: usize) -> Vec<f64> {
    table.iter().map(|row| row[i]).collect()
}

fn nan_min(v: &[f64]) -> f64 {
    v.iter().filter(|x| x.is_finite()).cloned().fold(f64::INFINITY, f64::min)
}

fn fig1_arnoldi(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let r = Resolved::of(cfg);
    let setup = fig1_setup(r.n, r.d(), r.theta, 1, cfg.seed)?;
    let (danger, second) = danger_and_second(&setup.tm);
    let pair = [setup.targets()[danger], setup.targets()[second]];
    let rec = arnoldi_record(&setup, r.max_iters, r.restart_mode, &pair, r.restart_mode.to_string().as_str())?;
    let mut s = Summary::new(cfg);
    let mut df = DataFile::new("fig1_arnoldi.dat", &["step", "res_danger_rr", "res_second_rr", "res_danger_hess", "res_second_hess"]);
    for (k, (h, q)) in rec.hessenberg.iter().zip(&rec.rayleigh_ritz).enumerate() {
        df.push(vec![(k + 1) as f64, q[0], q[1], h[0], h[1]]);
    }
    s.metric("norm_a", spectral_norm(&setup.tm.a)?);
    let last = rec.run.last();
    s.metric("hessenberg_norm", last.hessenberg().map(|h| h.norm_fro()).unwrap_or(0.0));
    s.metric("min_second_rr", nan_min(&pick(&rec.rayleigh_ritz, 1)));
    s.metric("min_second_hess", nan_min(&pick(&rec.hessenberg, 1)));
    s.series("res_danger_rr", pick(&rec.rayleigh_ritz, 0));
    s.series("res_second_rr", pick(&rec.rayleigh_ritz, 1));
    s.series("res_danger_hess", pick(&rec.hessenberg, 0));
    s.series("res_second_hess", pick(&rec.hessenberg, 1));
    for ev in rec.run.restart_log() {
        s.notes.push(format!("restart at step {}: {:?}", ev.step, ev.source));
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        summary: s,
        traces: Vec::new(),
        arnoldi: vec![rec],
        data: vec![df],
    })
}

fn fig7_restart(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let r = Resolved::of(cfg);
    let setup = fig1_setup(r.n, r.d(), r.theta, 1, cfg.seed)?;
    let targets = setup.targets().to_vec();
    let off = arnoldi_record(&setup, r.max_iters, RestartMode::Off, &targets, "off")?;
    let on = arnoldi_record(&setup, r.max_iters, r.restart_mode, &targets, &r.restart_mode.to_string())?;
    let mut s = Summary::new(cfg);
    let norm_a = spectral_norm(&setup.tm.a)?;
    s.metric("norm_a", norm_a);
    let last = |t: &Vec<Vec<f64>>| t.last().cloned().unwrap_or_default();
    let mut df = DataFile::new(
        "fig7_restart.dat",
        &["i", "lambda", "res_off_rr", "res_restart_rr", "res_off_hess", "res_restart_hess"],
    );
    let (off_rr, on_rr, off_h, on_h) = (last(&off.rayleigh_ritz), last(&on.rayleigh_ritz), last(&off.hessenberg), last(&on.hessenberg));
    for (i, t) in targets.iter().enumerate() {
        df.push(vec![i as f64, t.re, off_rr[i], on_rr[i], off_h[i], on_h[i]]);
    }
    let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    s.metric("max_off_rr", max(&off_rr));
    s.metric("max_restart_rr", max(&on_rr));
    s.metric("max_off_hess", max(&off_h));
    s.metric("max_restart_hess", max(&on_h));
    s.series("final_off_rr", off_rr);
    s.series("final_restart_rr", on_rr);
    s.series("final_off_hess", off_h);
    s.series("final_restart_hess", on_h);
    s.metric("total_steps", on.run.last().total_steps as f64);
    for ev in on.run.restart_log() {
        s.notes.push(format!("restart at step {}: {:?}", ev.step, ev.source));
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        summary: s,
        traces: Vec::new(),
        arnoldi: vec![off, on],
        data: vec![df],
    })
}

fn fig2_quadrature(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let r = Resolved::of(cfg);
    let ells: Vec<usize> = match cfg.overrides.ell {
        Some(l) => vec![l],
        None => vec![4, 8, 16, 32],
    };
    let mut s = Summary::new(cfg);
    let mut df = DataFile::new("fig2_quadrature.dat", &["ell", "res_danger", "res_second", "rho"]);
    let mut traces = Vec::new();
    let (mut rd, mut r2) = (Vec::new(), Vec::new());
    for ell in &ells {
        let setup = fig2_setup(r.n, r.d(), r.theta, *ell, r.m, cfg.seed)?;
        let trace = traced_run(&setup, r.variant, r.max_iters, r.tol, &format!("ell{ell}"), cfg.seed)?;
        let (danger, second) = danger_and_second(&setup.tm);
        let last = trace.records.last().expect("one iteration");
        df.push(vec![*ell as f64, last.residuals[danger], last.residuals[second], trace.rho]);
        rd.push(last.residuals[danger]);
        r2.push(last.residuals[second]);
        s.tally(&trace);
        traces.push(trace);
    }
    s.series("ell", ells.iter().map(|&l| l as f64).collect());
    s.series("res_danger", rd);
    s.series("res_second", r2);
    Ok(ExperimentOutput {
        config: cfg.clone(),
        summary: s,
        traces,
        arnoldi: Vec::new(),
        data: vec![df],
    })
}

fn fig2_iteration(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let r = Resolved::of(cfg);
    let setup = fig2_setup(r.n, r.d(), r.theta, r.ell, r.m, cfg.seed)?;
    let trace = traced_run(&setup, r.variant, r.max_iters, r.tol, cfg.experiment.name(), cfg.seed)?;
    let (danger, second) = danger_and_second(&setup.tm);
    let mut s = Summary::new(cfg);
    s.tally(&trace);
    let r1 = column(&trace, danger);
    let r2 = column(&trace, second);
    let mut df = DataFile::new("fig2_iteration.dat", &["k", "res_danger", "res_second"]);
    for (k, (a, b)) in r1.iter().zip(&r2).enumerate() {
        df.push(vec![(k + 1) as f64, *a, *b]);
    }
    s.metric("norm_a", trace.norm_a);
    s.metric("rho", trace.rho);
    s.series("res_danger", r1);
    s.series("res_second", r2);
    Ok(ExperimentOutput {
        config: cfg.clone(),
        summary: s,
        traces: vec![trace],
        arnoldi: Vec::new(),
        data: vec![df],
    })
}

fn fig6_nonnormal(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let r = Resolved::of(cfg);
    let setup = fig6_setup(r.n, r.d(), r.theta, r.ell, cfg.seed)?;
    let variants: Vec<IterationVariant> = match cfg.overrides.variant {
        Some(v) => vec![v],
        None => vec![IterationVariant::RayleighRitz, IterationVariant::PlainQr, IterationVariant::Schur],
    };
    let mut s = Summary::new(cfg);
    let mut traces = Vec::new();
    for v in &variants {
        let trace = traced_run(&setup, *v, r.max_iters, r.tol, v.name(), cfg.seed)?;
        s.tally(&trace);
        s.series(format!("max_residual_{}", v.name()), trace.max_residuals());
        s.series(format!("kappa_zd_{}", v.name()), trace.records.iter().map(|x| x.kappa_x_scaled).collect());
        s.metric("norm_a", trace.norm_a);
        traces.push(trace);
    }
    s.metric("kappa_v", crate::linalg::condition_number(&setup.tm.v)?);
    let mut left = DataFile::new("fig6_left.dat", &["k", "max_res_plain_qr", "max_res_schur", "max_res_rayleigh_ritz"]);
    let get = |name: &str, k: usize| {
        traces
            .iter()
            .find(|t| t.meta.variant == name)
            .and_then(|t| t.record(k))
            .map(|x| x.max_residual)
            .unwrap_or(f64::NAN)
    };
    for k in 1..=r.max_iters {
        left.push(vec![k as f64, get("plain_qr", k), get("schur", k), get("rayleigh_ritz", k)]);
    }
    let mut right = DataFile::new("fig6_right.dat", &["k", "kappa_zd", "max_res"]);
    if let Some(t) = traces.iter().find(|t| t.meta.variant == "rayleigh_ritz") {
        for x in &t.records {
            right.push(vec![x.k as f64, x.kappa_x_scaled, x.max_residual]);
        }
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        summary: s,
        traces,
        arnoldi: Vec::new(),
        data: vec![left, right],
    })
}

/// Map parameters of `fig6_phi`.
pub fn fig6_phi_params() -> PhiParams {
    PhiParams {
        rho: 1e-4,
        eps1: 1e-5,
        eps2: 1e-14,
    }
}

pub const FIG6_ETA0: f64 = 100.0;

fn fig6_phi(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let r = Resolved::of(cfg);
    let p = fig6_phi_params();
    let fp = fixed_points(&p);
    let traj = iterate_phi(&p, FIG6_ETA0, r.max_iters)?;
    let mut s = Summary::new(cfg);
    s.metric("eta_minus", fp.eta_minus);
    s.metric("eta_plus", fp.eta_plus);
    s.metric("delta", fp.delta);
    s.metric("sigma", fp.sigma);
    let mut df = DataFile::new("fig6_phi.dat", &["k", "eta", "bound"]);
    let mut bounds = Vec::new();
    for (k, eta) in traj.values.iter().enumerate() {
        let b = envelope_bound(&p, FIG6_ETA0, k)?;
        bounds.push(b);
        df.push(vec![k as f64, *eta, b]);
    }
    s.series("eta", traj.values.clone());
    s.series("bound", bounds);
    if traj.diverged {
        s.notes.push("trajectory left the domain".into());
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        summary: s,
        traces: Vec::new(),
        arnoldi: Vec::new(),
        data: vec![df],
    })
}

fn fig8(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let r = Resolved::of(cfg);
    let ells: Vec<usize> = match cfg.overrides.ell {
        Some(l) => vec![l],
        None => vec![32, 8],
    };
    let mut s = Summary::new(cfg);
    let mut traces = Vec::new();
    let mut data = Vec::new();
    for ell in ells {
        let setup = fig8_setup(r.n, r.d(), r.theta, ell, r.m, cfg.seed)?;
        let trace = traced_run(&setup, r.variant, r.max_iters, r.tol, &format!("ell{ell}"), cfg.seed)?;
        s.tally(&trace);
        s.metric(format!("rho_ell{ell}"), trace.rho);
        s.metric("norm_a", trace.norm_a);
        s.series(format!("max_residual_ell{ell}"), trace.max_residuals());
        data.push(residual_file(&format!("fig8_ell{ell}.dat"), &trace, setup.targets()));
        traces.push(trace);
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        summary: s,
        traces,
        arnoldi: Vec::new(),
        data,
    })
}

fn custom(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let r = Resolved::of(cfg);
    let spec = custom_spectrum(r.n, r.m, r.d, r.theta, cfg.seed)?;
    let setup = normal_setup(&spec, danger_circle(r.ell)?, r.m, cfg.seed)?;
    let trace = traced_run(&setup, r.variant, r.max_iters, r.tol, cfg.experiment.name(), cfg.seed)?;
    let mut s = Summary::new(cfg);
    s.tally(&trace);
    s.metric("norm_a", trace.norm_a);
    s.metric("rho", trace.rho);
    s.series("max_residual", trace.max_residuals());
    let tans: Vec<f64> = trace.records.iter().map(|x| x.tan_theta1).collect();
    s.series("tan_theta1", tans.clone());
    let mut df = DataFile::new("custom.dat", &["k", "max_res", "tan_theta1"]);
    for (x, t) in trace.records.iter().zip(&tans) {
        df.push(vec![x.k as f64, x.max_residual, *t]);
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        summary: s,
        traces: vec![trace],
        arnoldi: Vec::new(),
        data: vec![df],
    })
}

/// Test matrix of a matrix-based experiment, as its run would build it.
pub fn matrix_for(cfg: &ExperimentConfig) -> Result<TestMatrix> {
    cfg.validate()?;
    let r = Resolved::of(cfg);
    let seed = cfg.seed;
    let setup = match cfg.experiment {
        Experiment::Fig1Arnoldi | Experiment::Fig7Restart => fig1_setup(r.n, r.d(), r.theta, 1, seed)?,
        Experiment::Fig1Fsi => fig1_setup(r.n, r.d(), r.theta, r.m, seed)?,
        Experiment::Fig2QuadratureRefine | Experiment::Fig2IterationRefine => fig2_setup(r.n, r.d(), r.theta, r.ell, r.m, seed)?,
        Experiment::Fig35NormalDanger => fig3_setup(r.n, r.d(), r.theta, r.ell, seed)?,
        Experiment::Fig6Nonnormal => fig6_setup(r.n, r.d(), r.theta, r.ell, seed)?,
        Experiment::Fig8MultiDanger => fig8_setup(r.n, r.d(), r.theta, r.ell, r.m, seed)?,
        Experiment::Custom => {
            let spec = custom_spectrum(r.n, r.m, r.d, r.theta, seed)?;
            normal_setup(&spec, danger_circle(r.ell)?, r.m, seed)?
        }
        Experiment::Fig6Phi => return Err(Error::Config("fig6_phi has no matrix".into())),
    };
    Ok(setup.tm)
}

/// Eigenvalues with their group (0 dangerous, 1 target, 2 unwanted) and
/// Wilkinson condition numbers.
pub fn spectrum_file(tm: &TestMatrix) -> DataFile {
    let mut df = DataFile::new("spectrum.dat", &["i", "re", "im", "group", "wilkinson"]);
    let m = tm.m();
    let wilk = tm.wilkinson();
    for (i, l) in tm.spectrum.eigenvalues().iter().enumerate() {
        let g = if tm.spectrum.danger_for(i).is_some() {
            0.0
        } else if i < m {
            1.0
        } else {
            2.0
        };
        df.push(vec![i as f64, l.re, l.im, g, wilk[i]]);
    }
    df
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_helpers() {
        let s = [1.0, 1e-2, 1e-4, 1e-13, 1e-14];
        assert!((geometric_rate(&s, 1e-12).unwrap().log10() + 13.0 / 3.0).abs() < 1e-12);
        assert_eq!(step_factors(&s, 1e-12).len(), 3);
        assert_eq!(first_below(&s, 1e-12), Some(4));
        assert!((correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.5]) - 1.0).abs() < 1e-2);
    }

    #[test]
    fn data_file_renders_nan_and_header() {
        let mut df = DataFile::new("x.dat", &["a", "b"]);
        df.push(vec![1.0, f64::NAN]);
        assert_eq!(df.render(), "# a b\n1.0000000000000000e0 NaN\n");
    }

    #[test]
    fn custom_spectrum_places_optional_danger() {
        let clean = custom_spectrum(40, 5, None, PI, 1).unwrap();
        assert!(clean.danger.is_empty());
        assert_eq!(clean.m(), 5);
        let risky = custom_spectrum(40, 5, Some(1e-9), PI, 1).unwrap();
        assert_eq!(risky.danger.len(), 1);
        assert_eq!(risky.n(), 40);
    }
}
