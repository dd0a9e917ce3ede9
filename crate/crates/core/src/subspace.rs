//! Filtered subspace iteration: plain QR, Rayleigh-Ritz and Schur-vector variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{apply_filter_traced, RationalFilter};
use crate::linalg::eig::pair_residuals;
use crate::linalg::qr::orthogonality_defect;
use crate::linalg::{eig_dense, qr_householder, schur_decompose, ComplexMatrix, C64};

/// Orthonormality tolerance for bases handed to the iteration.
pub const ORTHONORMAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationVariant {
    /// `X_k = r(A) Q_{k-1}`, `Q_k = qf(X_k)`.
    PlainQr,
    /// Filter applied to the normalized Ritz vectors of the previous step.
    RayleighRitz,
    /// Plain QR with the basis rotated to ordered Schur vectors each step.
    Schur,
}

impl IterationVariant {
    pub const ALL: [IterationVariant; 3] = [Self::PlainQr, Self::RayleighRitz, Self::Schur];

    pub fn name(self) -> &'static str {
        match self {
            Self::PlainQr => "plain_qr",
            Self::RayleighRitz => "rayleigh_ritz",
            Self::Schur => "schur",
        }
    }
}

impl fmt::Display for IterationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IterationVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "plain_qr" | "plain" | "qr" => Ok(Self::PlainQr),
            "rayleigh_ritz" | "rr" => Ok(Self::RayleighRitz),
            "schur" => Ok(Self::Schur),
            other => Err(Error::Config(format!("unknown iteration variant '{other}'"))),
        }
    }
}

/// Approximate eigenpairs from a projection, with unit-norm vectors.
#[derive(Debug, Clone)]
pub struct RitzPairs {
    pub values: Vec<C64>,
    pub vectors: ComplexMatrix,
    /// `||A v - lambda v||` per pair.
    pub residuals: Vec<f64>,
}

impl RitzPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    fn permuted(&self, order: &[usize]) -> Self {
        RitzPairs {
            values: order.iter().map(|&i| self.values[i]).collect(),
            vectors: self.vectors.select_columns(order),
            residuals: order.iter().map(|&i| self.residuals[i]).collect(),
        }
    }
}

/// `|r(lambda)|`, with a pole hit counted as infinite.
pub(crate) fn filter_magnitude(f: &RationalFilter, lambda: C64) -> f64 {
    match f.eval_scalar(lambda) {
        Ok(v) => v.norm(),
        Err(_) => f64::INFINITY,
    }
}

/// Ritz pairs of `A` from the orthonormal basis `q`.
///
/// With a filter, pairs come back sorted by `|r(theta)|` descending; without
/// one they keep the order of the dense eigensolver.
pub fn rayleigh_ritz(a: &ComplexMatrix, q: &ComplexMatrix, filter: Option<&RationalFilter>) -> Result<RitzPairs> {
    if q.rows() != a.rows() || q.cols() == 0 {
        return Err(Error::Shape(format!(
            "rayleigh_ritz: A is {}x{}, Q is {}x{}",
            a.rows(),
            a.cols(),
            q.rows(),
            q.cols()
        )));
    }
    let aq = a.matmul(q);
    let b = q.adjoint_mul(&aq);
    let eig = eig_dense(&b).map_err(|e| e.context("Rayleigh-Ritz projection"))?;
    let vectors = q.matmul(&eig.eigenvectors).normalize_columns();
    let residuals = pair_residuals(a, &eig.eigenvalues, &vectors);
    let pairs = RitzPairs {
        values: eig.eigenvalues,
        vectors,
        residuals,
    };
    match filter {
        Some(f) => {
            let mags: Vec<f64> = pairs.values.iter().map(|&v| filter_magnitude(f, v)).collect();
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            order.sort_by(|&i, &j| mags[j].total_cmp(&mags[i]));
            Ok(pairs.permuted(&order))
        }
        None => Ok(pairs),
    }
}

/// Snapshot after `iteration` filter applications.
#[derive(Debug, Clone)]
pub struct SubspaceState {
    pub iteration: usize,
    pub variant: IterationVariant,
    /// Orthonormal basis `Q_k`.
    pub q: ComplexMatrix,
    /// Filtered block before orthogonalization (`X_k`, or `Z_k` for Rayleigh-Ritz).
    /// For the initial state this is `Q_0`.
    pub x_raw: ComplexMatrix,
    pub ritz: RitzPairs,
    /// `[node][column]` backward-error constants of the shifted solves (empty at `k = 0`).
    pub solve_gamma: Vec<Vec<f64>>,
    /// `[node][column]` norms of the per-node solutions (empty at `k = 0`).
    pub part_norms: Vec<Vec<f64>>,
}

impl SubspaceState {
    pub fn ritz_values(&self) -> &[C64] {
        &self.ritz.values
    }

    pub fn ritz_vectors(&self) -> &ComplexMatrix {
        &self.ritz.vectors
    }

    pub fn residuals(&self) -> &[f64] {
        &self.ritz.residuals
    }

    pub fn max_residual(&self) -> f64 {
        self.ritz.max_residual()
    }

    pub fn max_gamma(&self) -> f64 {
        self.solve_gamma.iter().flatten().copied().fold(0.0, f64::max)
    }
}

/// State at `k = 0` for an orthonormal starting block.
pub fn initial_state(
    variant: IterationVariant,
    a: &ComplexMatrix,
    f: &RationalFilter,
    q0: &ComplexMatrix,
) -> Result<SubspaceState> {
    if !a.is_square() || q0.rows() != a.rows() || q0.cols() == 0 || q0.cols() > a.rows() {
        return Err(Error::Shape(format!(
            "initial block is {}x{} for a {}x{} matrix",
            q0.rows(),
            q0.cols(),
            a.rows(),
            a.cols()
        )));
    }
    let defect = orthogonality_defect(q0);
    if defect > ORTHONORMAL_TOL {
        return Err(Error::Precondition(format!(
            "starting block is not orthonormal (||Q*Q - I|| = {defect:e})"
        )));
    }
    let ritz = rayleigh_ritz(a, q0, Some(f))?;
    Ok(SubspaceState {
        iteration: 0,
        variant,
        q: q0.clone(),
        x_raw: q0.clone(),
        ritz,
        solve_gamma: Vec::new(),
        part_norms: Vec::new(),
    })
}

fn orthonormal_factor(x: &ComplexMatrix, k: usize) -> Result<ComplexMatrix> {
    match qr_householder(x) {
        Ok(qr) => Ok(qr.q),
        Err(Error::DegeneratePivot { column, norm }) => Err(Error::RankDeficient(format!(
            "filtered block collapsed at iteration {k} (column {column}, remaining norm {norm:e})"
        ))),
        Err(e) => Err(e),
    }
}

/// One filter application followed by orthogonalization and extraction.
pub fn fsi_step(
    variant: IterationVariant,
    a: &ComplexMatrix,
    f: &RationalFilter,
    state: &SubspaceState,
) -> Result<SubspaceState> {
    let k = state.iteration + 1;
    let input = match variant {
        IterationVariant::PlainQr | IterationVariant::Schur => &state.q,
        IterationVariant::RayleighRitz => &state.ritz.vectors,
    };
    let app = apply_filter_traced(f, a, input).map_err(|e| e.context(format!("filter at iteration {k}")))?;
    if !app.x.is_finite() {
        return Err(Error::NonFinite(format!("filtered block at iteration {k}")));
    }
    let mut q = orthonormal_factor(&app.x, k)?;
    if variant == IterationVariant::Schur {
        let b = q.adjoint_mul(&a.matmul(&q));
        let mut schur = schur_decompose(&b).map_err(|e| e.context(format!("Schur form at iteration {k}")))?;
        schur.sort_by_key_desc(|t| filter_magnitude(f, t));
        q = q.matmul(&schur.z);
    }
    let ritz = rayleigh_ritz(a, &q, Some(f))?;
    Ok(SubspaceState {
        iteration: k,
        variant,
        q,
        x_raw: app.x,
        ritz,
        solve_gamma: app.solve_gamma,
        part_norms: app.part_norms,
    })
}

/// Every state of a run, starting with `k = 0`.
#[derive(Debug, Clone)]
pub struct FsiRun {
    pub variant: IterationVariant,
    pub states: Vec<SubspaceState>,
    /// First iteration whose maximum residual is at most `tol`.
    pub converged_at: Option<usize>,
    pub tol: f64,
}

impl FsiRun {
    pub fn last(&self) -> &SubspaceState {
        self.states.last().expect("run holds the initial state")
    }

    /// Maximum residual per iteration, `k = 0` first.
    pub fn max_residuals(&self) -> Vec<f64> {
        self.states.iter().map(SubspaceState::max_residual).collect()
    }
}

/// Iterates until every Ritz residual is at most `tol` or `max_iters` steps
/// have run. A `tol` of zero forces exactly `max_iters` steps.
pub fn run_fsi(
    variant: IterationVariant,
    a: &ComplexMatrix,
    f: &RationalFilter,
    q0: &ComplexMatrix,
    max_iters: usize,
    tol: f64,
) -> Result<FsiRun> {
    let mut states = vec![initial_state(variant, a, f, q0)?];
    let mut converged_at = None;
    for _ in 0..max_iters {
        let next = fsi_step(variant, a, f, states.last().expect("nonempty"))?;
        let done = next.max_residual() <= tol;
        let k = next.iteration;
        states.push(next);
        if done {
            converged_at = Some(k);
            break;
        }
    }
    Ok(FsiRun {
        variant,
        states,
        converged_at,
        tol,
    })
}

/// Default stopping tolerance `1e-12 ||A||`.
pub fn default_tol(a: &ComplexMatrix) -> Result<f64> {
    Ok(1e-12 * crate::linalg::spectral_norm(a)?)
}

/// Assigns a distinct Ritz pair to every target.
///
/// Greedy over all (target, pair) combinations by increasing distance, ties
/// broken by the smaller residual. Returns, per target, the pair index.
pub fn match_to_targets(values: &[C64], residuals: &[f64], targets: &[C64]) -> Result<Vec<usize>> {
    if values.len() < targets.len() || residuals.len() != values.len() {
        return Err(Error::Shape(format!(
            "cannot match {} targets to {} Ritz values",
            targets.len(),
            values.len()
        )));
    }
    let mut cand: Vec<(f64, f64, usize, usize)> = Vec::with_capacity(values.len() * targets.len());
    for (t, &lt) in targets.iter().enumerate() {
        for (p, &lp) in values.iter().enumerate() {
            cand.push(((lt - lp).norm(), residuals[p], t, p));
        }
    }
    cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut out = vec![usize::MAX; targets.len()];
    let mut used = vec![false; values.len()];
    let mut left = targets.len();
    for (_, _, t, p) in cand {
        if left == 0 {
            break;
        }
        if out[t] == usize::MAX && !used[p] {
            out[t] = p;
            used[p] = true;
            left -= 1;
        }
    }
    Ok(out)
}

/// Residual of the Ritz pair matched to each target.
pub fn matched_residuals(ritz: &RitzPairs, targets: &[C64]) -> Result<Vec<f64>> {
    Ok(match_to_targets(&ritz.values, &ritz.residuals, targets)?
        .into_iter()
        .map(|p| ritz.residuals[p])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix::re;
    use crate::linalg::random::random_orthonormal;

    fn diag_matrix() -> ComplexMatrix {
        ComplexMatrix::from_diag(&[re(10.2), re(10.4), re(3.0), re(2.0), re(1.0), re(0.5)])
    }

    #[test]
    fn exact_invariant_subspace_has_tiny_residuals() {
        let a = diag_matrix();
        let q = ComplexMatrix::eye(6, 2);
        let f = RationalFilter::shift_invert(re(10.0));
        let rr = rayleigh_ritz(&a, &q, Some(&f)).unwrap();
        let u = f64::EPSILON;
        for r in &rr.residuals {
            assert!(*r <= 1e3 * u * 10.4);
        }
        // 10.2 is closer to the pole, so it leads.
        assert_eq!(rr.values[0], re(10.2));
    }

    #[test]
    fn single_eigenvector_gives_exact_value() {
        let a = diag_matrix();
        let mut q = ComplexMatrix::zeros(6, 1);
        q[(3, 0)] = re(1.0);
        let rr = rayleigh_ritz(&a, &q, None).unwrap();
        assert_eq!(rr.values[0], re(2.0));
        assert_eq!(rr.residuals[0], 0.0);
    }

    #[test]
    fn perfect_filter_converges_in_one_step() {
        let a = diag_matrix();
        // Poles far from the spectrum except near the targets.
        let f = RationalFilter::circle(re(10.3), 0.5, 32).unwrap();
        let q0 = random_orthonormal(6, 2, 3, false);
        let run = run_fsi(IterationVariant::PlainQr, &a, &f, &q0, 5, 1e3 * f64::EPSILON * 10.4).unwrap();
        assert_eq!(run.converged_at, Some(1));
    }

    #[test]
    fn variants_agree_on_clean_problem() {
        let a = diag_matrix();
        let f = RationalFilter::shift_invert(re(10.0));
        let q0 = random_orthonormal(6, 2, 11, false);
        for v in IterationVariant::ALL {
            let run = run_fsi(v, &a, &f, &q0, 60, 1e-12).unwrap();
            assert!(run.converged_at.is_some(), "{v} did not converge");
            let mut vals: Vec<f64> = run.last().ritz.values.iter().map(|z| z.re).collect();
            vals.sort_by(f64::total_cmp);
            assert!((vals[0] - 10.2).abs() < 1e-10 && (vals[1] - 10.4).abs() < 1e-10);
            assert!(orthogonality_defect(&run.last().q) <= ORTHONORMAL_TOL);
        }
    }

    #[test]
    fn rejects_non_orthonormal_start() {
        let a = diag_matrix();
        let f = RationalFilter::shift_invert(re(10.0));
        let q0 = ComplexMatrix::eye(6, 2).scale(re(2.0));
        assert!(matches!(
            initial_state(IterationVariant::PlainQr, &a, &f, &q0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn greedy_matching_is_global() {
        let vals = [re(1.05), re(0.96), re(5.0)];
        let res = [1e-3, 1e-9, 0.0];
        // 0.96 is the nearest value to target 1.0; 1.05 then goes to 1.1.
        let m = match_to_targets(&vals, &res, &[re(1.0), re(1.1)]).unwrap();
        assert_eq!(m, vec![1, 0]);
        // Exact tie resolved by residual.
        let m = match_to_targets(&[re(0.75), re(1.25)], &[1e-3, 1e-9], &[re(1.0)]).unwrap();
        assert_eq!(m, vec![1]);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("rayleigh-ritz".parse::<IterationVariant>().unwrap(), IterationVariant::RayleighRitz);
        assert_eq!("plain_qr".parse::<IterationVariant>().unwrap(), IterationVariant::PlainQr);
        assert!("lanczos".parse::<IterationVariant>().is_err());
    }
}
