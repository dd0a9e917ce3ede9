//! Principal angles, conditioning of iterates, eigenvector coordinates and
//! checks of the convergence and conditioning bounds against measured runs.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{filter_profile, FilterSpectrumProfile, RationalFilter};
use crate::linalg::{
    condition_number, orth, pseudo_inverse, qr_householder, singular_values, spectral_norm, svd_jacobi, ComplexMatrix,
    C64, UNIT_ROUNDOFF,
};
use crate::spectrum::{MatrixKind, TestMatrix};
use crate::subspace::{match_to_targets, FsiRun, IterationVariant, SubspaceState};

/// Relative tolerance used by every [`BoundCheck`].
pub const CHECK_RTOL: f64 = 1e-9;
/// Pseudoinverse cutoff relative to `sigma_1` in the tangent computation.
pub const TANGENT_CUTOFF: f64 = 1e3 * UNIT_ROUNDOFF;
/// Multiplier absorbing the `O(d)` remainder of the column-scaled bound.
pub const TWICE_ENOUGH_SLACK: f64 = 1.1;

/// Principal angles between `span(X)` and `span(Y)`, largest angle first.
#[derive(Debug, Clone, Serialize)]
pub struct AngleReport {
    /// Nondecreasing.
    pub cosines: Vec<f64>,
    /// Nonincreasing.
    pub sines: Vec<f64>,
    /// Nonincreasing; infinite where `Y^* X` loses rank.
    pub tangents: Vec<f64>,
    pub largest_tangent: f64,
}

impl AngleReport {
    /// `cos theta_1`, the cosine of the largest angle.
    pub fn cos_theta1(&self) -> f64 {
        self.cosines[0]
    }
}

/// Angles between `span(x)` and the orthonormal `y`.
///
/// Cosines are singular values of `Y^* qf(X)` and sines those of
/// `(I - Y Y^*) qf(X)`. Tangents are the singular values of
/// `(I - Y Y^*) X (Y^* X)^+` with `X = qf(X)`.
pub fn principal_angles(x: &ComplexMatrix, y: &ComplexMatrix) -> Result<AngleReport> {
    if x.rows() != y.rows() || x.cols() != y.cols() || x.cols() == 0 {
        return Err(Error::Shape(format!(
            "principal_angles: X is {}x{}, Y is {}x{}",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols()
        )));
    }
    let m = x.cols();
    let qx = match qr_householder(x) {
        Ok(f) => f.q,
        Err(Error::DegeneratePivot { column, .. }) => {
            return Err(Error::RankDeficient(format!("X loses rank at column {column}")))
        }
        Err(e) => return Err(e),
    };
    let yq = y.adjoint_mul(&qx);
    let mut cosines: Vec<f64> = singular_values(&yq)?.into_iter().map(|s| s.min(1.0)).collect();
    cosines.reverse();
    let perp = qx.sub(&y.matmul(&yq));
    let sines: Vec<f64> = singular_values(&perp)?.into_iter().map(|s| s.min(1.0)).collect();

    let (pinv, rank) = pseudo_inverse(&yq, TANGENT_CUTOFF)?;
    let mut tangents = vec![f64::INFINITY; m - rank];
    if rank > 0 {
        let t = perp.matmul(&pinv);
        tangents.extend(svd_jacobi(&t)?.singular_values.into_iter().take(rank));
    }
    let largest_tangent = tangents[0];
    Ok(AngleReport {
        cosines,
        sines,
        tangents,
        largest_tangent,
    })
}

/// `tan theta_1(span(x), span(y))`.
pub fn largest_tangent(x: &ComplexMatrix, y: &ComplexMatrix) -> Result<f64> {
    Ok(principal_angles(x, y)?.largest_tangent)
}

/// Measured quantity against a bound; `satisfied` iff `lhs <= rhs (1 + 1e-9)`.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    /// `rhs / lhs`.
    pub slack: f64,
    /// The bound's hypothesis failed, so nothing was checked.
    pub inconclusive: bool,
}

impl BoundCheck {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        BoundCheck {
            name: name.into(),
            lhs,
            rhs,
            satisfied: lhs <= rhs * (1.0 + CHECK_RTOL),
            slack: rhs / lhs,
            inconclusive: false,
        }
    }

    pub fn inconclusive(name: impl Into<String>, lhs: f64) -> Self {
        BoundCheck {
            name: name.into(),
            lhs,
            rhs: f64::INFINITY,
            satisfied: true,
            slack: f64::INFINITY,
            inconclusive: true,
        }
    }
}

/// Where the filter is largest on the targets and how close that eigenvalue
/// sits to the nearest node.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DangerGeometry {
    /// Index into the target list of the eigenvalue with the largest `|r|`.
    pub target_index: usize,
    /// Distance to the nearest node.
    pub d: f64,
    /// `|w_j|` at the nearest node.
    pub weight: f64,
    /// `|r(lambda_1)|`, `|r(lambda_2)|`, `|r(lambda_m)|` in filtered order.
    pub r1: f64,
    pub r2: f64,
    pub rm: f64,
}

impl DangerGeometry {
    /// `|w_j| / d`, the amplification the nearest node gives its eigenvector.
    pub fn amplification(&self) -> f64 {
        self.weight / self.d
    }
}

pub fn danger_geometry(f: &RationalFilter, profile: &FilterSpectrumProfile, targets: &[C64]) -> DangerGeometry {
    let target_index = profile.target_order[0];
    let lambda = targets[target_index];
    let j = f.nearest_node(lambda);
    DangerGeometry {
        target_index,
        d: (f.nodes()[j] - lambda).norm(),
        weight: f.weights()[j].norm(),
        r1: profile.target_values[0].norm(),
        r2: profile.second_target_abs(),
        rm: profile.target_min,
    }
}

/// Target eigenvectors reordered so the filter-dominant one comes first.
fn ordered_target_columns(v: &ComplexMatrix, profile: &FilterSpectrumProfile) -> ComplexMatrix {
    v.select_columns(&profile.target_order)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KappaBounds {
    pub lower: f64,
    pub upper: f64,
}

fn smallest_singular_value(x: &ComplexMatrix) -> Result<f64> {
    Ok(*singular_values(x)?.last().expect("nonempty"))
}

fn inverse_norm(x: &ComplexMatrix, what: &str) -> Result<f64> {
    let s = smallest_singular_value(x)?;
    if !(s > 0.0) {
        return Err(Error::RankDeficient(format!("{what} is singular")));
    }
    Ok(1.0 / s)
}

/// Asymptotic lower and rigorous upper bound on `kappa(r(A) Q_0)` for a
/// normal matrix.
///
/// `lower = |w| ||v_1^* Q_0|| / (d |r(lambda_2)|)`, with `|w| = 1` for a
/// filter normalized at the nearest node, and
/// `upper = |r(lambda_1) / r(lambda_m)| ||(V_1^* Q_0)^{-1}||`.
pub fn kappa_bounds_normal(f: &RationalFilter, tm: &TestMatrix, q0: &ComplexMatrix) -> Result<KappaBounds> {
    let profile = filter_profile(f, &tm.spectrum)?;
    let g = danger_geometry(f, &profile, &tm.spectrum.target);
    let v1 = tm.v1();
    let vq = v1.adjoint_mul(q0);
    let inv = inverse_norm(&vq, "V_1^* Q_0")?;
    let v1q: f64 = crate::linalg::norm2(&q0.adjoint_matvec(v1.col(g.target_index)));
    let lower = if g.r2 > 0.0 {
        g.amplification() * v1q / g.r2
    } else {
        f64::INFINITY
    };
    Ok(KappaBounds {
        lower,
        upper: g.r1 / g.rm * inv,
    })
}

/// As [`kappa_bounds_normal`] for a diagonalizable matrix with left vectors.
///
/// `lower = (||w_1^* Q_0|| / |w_1^* v_1|) |w| / (d kappa(V) |r(lambda_2)|)`,
/// `upper = |r(lambda_1)/r(lambda_m)| kappa(V) ||(U_1^* Q_0)^{-1}|| / (sigma_m(V_1) sigma_m(W_1))`
/// with `U_1 = qf(W_1)` and `W_1` scaled so that `W^* V = I`.
pub fn kappa_bounds_nonnormal(f: &RationalFilter, tm: &TestMatrix, q0: &ComplexMatrix) -> Result<KappaBounds> {
    let profile = filter_profile(f, &tm.spectrum)?;
    let g = danger_geometry(f, &profile, &tm.spectrum.target);
    let kappa_v = condition_number(&tm.v)?;
    let m = tm.m();
    let w1_bi = tm.w_biorthogonal().columns_range(0, m);
    let u1 = orth(&w1_bi)?;
    let inv = inverse_norm(&u1.adjoint_mul(q0), "U_1^* Q_0")?;
    let smin_v1 = smallest_singular_value(&tm.v1())?;
    let smin_w1 = smallest_singular_value(&w1_bi)?;
    let i = g.target_index;
    let wq = crate::linalg::norm2(&q0.adjoint_matvec(tm.w.col(i)));
    let wilk = tm.w_dot_v[i].norm();
    let lower = if g.r2 > 0.0 {
        (wq / wilk) * g.amplification() / (kappa_v * g.r2)
    } else {
        f64::INFINITY
    };
    Ok(KappaBounds {
        lower,
        upper: g.r1 / g.rm * kappa_v * inv / (smin_v1 * smin_w1),
    })
}

/// `kappa(X T)` with `T = diag(1/r(lambda_1), 1, ..., 1)`.
pub fn kappa_first_column_scaled(x: &ComplexMatrix, r1: C64) -> Result<f64> {
    let mut s = vec![C64::new(1.0, 0.0); x.cols()];
    s[0] = C64::new(1.0, 0.0) / r1;
    condition_number(&x.scale_columns(&s))
}

/// Blocks of `V_1^* Q_1` with the filter-dominant eigenvector first.
#[derive(Debug, Clone)]
pub struct TwiceEnoughBlocks {
    pub a: C64,
    pub b_norm: f64,
    pub c_norm: f64,
    pub d_inv_norm: f64,
}

pub fn twice_enough_blocks(
    v1_ordered: &ComplexMatrix,
    q1: &ComplexMatrix,
) -> Result<TwiceEnoughBlocks> {
    let g = v1_ordered.adjoint_mul(q1);
    let m = g.rows();
    if m < 2 {
        return Err(Error::Precondition("twice-is-enough blocks need m >= 2".into()));
    }
    let b = g.block(0, 1, 1, m);
    let c = g.block(1, m, 0, 1);
    let d = g.block(1, m, 1, m);
    Ok(TwiceEnoughBlocks {
        a: g[(0, 0)],
        b_norm: b.norm_fro(),
        c_norm: c.norm_fro(),
        d_inv_norm: inverse_norm(&d, "D block")?,
    })
}

/// Column-scaled conditioning of the second iterate against
/// `M ((A ||b|| + 1) ||D^{-1}|| / |r(lambda_m)| + 1)` where `A = |w|/d` and
/// `M = A ||b|| + max(1, |r(lambda_2)|)`. The bound is relaxed by 10%.
pub fn twice_enough_check(
    f: &RationalFilter,
    tm: &TestMatrix,
    q1: &ComplexMatrix,
    x2: &ComplexMatrix,
) -> Result<BoundCheck> {
    let profile = filter_profile(f, &tm.spectrum)?;
    let g = danger_geometry(f, &profile, &tm.spectrum.target);
    let v1 = ordered_target_columns(&tm.v1(), &profile);
    let blocks = twice_enough_blocks(&v1, q1)?;
    let amp = g.amplification();
    let big_m = amp * blocks.b_norm + g.r2.max(1.0);
    let rhs = big_m * ((amp * blocks.b_norm + 1.0) * blocks.d_inv_norm / g.rm + 1.0);
    let lhs = kappa_first_column_scaled(x2, profile.target_values[0])?;
    Ok(BoundCheck::new("twice_enough", lhs, TWICE_ENOUGH_SLACK * rhs))
}

/// Round-off measured while applying the filter in one iteration.
///
/// All quantities are absolute bounds built from the actual residuals of
/// the shifted solves and the size of the per-node solutions.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct RoundoffConstants {
    /// Largest normwise backward error of a solve, in units of `u ||A||_2`.
    pub gamma: f64,
    /// `gamma * max_i rtilde(lambda_i) / |r(lambda_i)|` over targets.
    pub gamma1: f64,
    /// Largest solve residual relative to the filtered column it feeds,
    /// times `max rtilde` over the unwanted eigenvalues.
    pub gamma2: f64,
    /// Rounding in the weighted sum relative to each filtered column, in units of `u`.
    pub gamma_sum: f64,
    /// Bound on `||P_V R||`, the perturbation of the previous basis inside
    /// the target space.
    pub target_perturbation: f64,
    /// Bound on `||(I - P_V) r(A) R C||`, the perturbation of the column-scaled
    /// iterate outside the target space.
    pub unwanted_perturbation: f64,
}

/// Builds the constants from one filter application.
pub fn roundoff_constants(
    f: &RationalFilter,
    profile: &FilterSpectrumProfile,
    state: &SubspaceState,
    norm_a: f64,
    norm_a_fro: f64,
) -> RoundoffConstants {
    let u = UNIT_ROUNDOFF;
    let m = state.x_raw.cols();
    let xnorm = state.x_raw.column_norms();
    let ratio = profile.target_majorant_ratio();
    let rt2 = profile.unwanted_majorant_max();
    let mut gamma: f64 = 0.0;
    let mut gamma_rel: f64 = 0.0;
    let mut res_sq = 0.0;
    let mut res_scaled_sq = 0.0;
    // residual_ji = gamma_ji u ||A||_F ||x^(j)_i||.
    for (gj, pj) in state.solve_gamma.iter().zip(&state.part_norms) {
        for i in 0..m {
            let res = gj[i] * u * norm_a_fro * pj[i];
            gamma = gamma.max(gj[i] * norm_a_fro / norm_a);
            gamma_rel = gamma_rel.max(res / (u * norm_a * xnorm[i]));
            res_sq += res * res;
            res_scaled_sq += (res / xnorm[i]).powi(2) / m as f64;
        }
    }
    let ell = f.len() as f64;
    let mut sum_sq = 0.0;
    let mut sum_scaled_sq = 0.0;
    let mut gamma_sum: f64 = 0.0;
    for i in 0..m {
        let mag: f64 = f
            .weights()
            .iter()
            .zip(&state.part_norms)
            .map(|(w, pj)| w.norm() * pj[i])
            .sum();
        let e = (ell + 1.0) * u * mag;
        sum_sq += e * e;
        sum_scaled_sq += (e / xnorm[i]).powi(2) / m as f64;
        gamma_sum = gamma_sum.max(e / (u * xnorm[i]));
    }
    RoundoffConstants {
        gamma,
        gamma1: gamma * ratio,
        gamma2: gamma_rel * rt2,
        gamma_sum,
        target_perturbation: ratio * res_sq.sqrt() + sum_sq.sqrt() / profile.target_min,
        unwanted_perturbation: rt2 * res_scaled_sq.sqrt() + sum_scaled_sq.sqrt(),
    }
}

/// One-step refinement bound with round-off:
/// `tan_k <= rho tan_{k-1} / (1 - alpha) + beta`, where
/// `alpha = ||P_V R|| / cos_{k-1}` and
/// `beta = ||(I - P_V) r(A) R C|| / (sigma_min(X_k C_k) cos_k)`.
/// Inconclusive when `alpha >= 1` or `cos_k = 0`.
pub fn perturbed_bound_check(
    rho: f64,
    tan_prev: f64,
    cos_prev: f64,
    tan_k: f64,
    cos_k: f64,
    sigma_min_scaled: f64,
    consts: &RoundoffConstants,
) -> BoundCheck {
    let alpha = consts.target_perturbation / cos_prev;
    if !(alpha < 1.0) || !(cos_k > 0.0) || !(sigma_min_scaled > 0.0) {
        return BoundCheck::inconclusive("perturbed_one_step", tan_k);
    }
    let beta = consts.unwanted_perturbation / (sigma_min_scaled * cos_k);
    BoundCheck::new("perturbed_one_step", tan_k, rho * tan_prev / (1.0 - alpha) + beta)
}

/// Exact-arithmetic contraction `tan_k <= rho tan_{k-1}`, relaxed by `1e-6`.
/// Inconclusive once the predicted tangent drops below `floor`, where
/// rounding in the iterate dominates.
pub fn one_step_contraction_check(rho: f64, tan_prev: f64, tan_k: f64, floor: f64) -> BoundCheck {
    let rhs = rho * tan_prev * (1.0 + 1e-6);
    if rhs < floor {
        return BoundCheck::inconclusive("one_step_contraction", tan_k);
    }
    BoundCheck::new("one_step_contraction", tan_k, rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateGroup {
    Danger,
    Target,
    Unwanted,
}

/// `|v_i^* q_j|` (or `|w_i^* q_j|`) for every eigenvector `i` and column `j`.
#[derive(Debug, Clone, Serialize)]
pub struct CoordinateDecomposition {
    /// `[column][eigenvector]`.
    pub magnitudes: Vec<Vec<f64>>,
    pub danger: Vec<usize>,
    pub target: Vec<usize>,
    pub unwanted: Vec<usize>,
    pub left: bool,
}

impl CoordinateDecomposition {
    pub fn group(&self, g: CoordinateGroup) -> &[usize] {
        match g {
            CoordinateGroup::Danger => &self.danger,
            CoordinateGroup::Target => &self.target,
            CoordinateGroup::Unwanted => &self.unwanted,
        }
    }

    /// Largest magnitude within a group for column `j` (0 for an empty group).
    pub fn group_max(&self, j: usize, g: CoordinateGroup) -> f64 {
        self.group(g).iter().map(|&i| self.magnitudes[j][i]).fold(0.0, f64::max)
    }

    /// `sum_i |v_i^* q_j|^2`.
    pub fn energy(&self, j: usize) -> f64 {
        self.magnitudes[j].iter().map(|x| x * x).sum()
    }
}

/// Eigenvector coordinates of the columns of `basis`, grouped into the
/// dangerous eigenvalues, the other targets and the unwanted eigenvalues.
pub fn coordinates(basis: &ComplexMatrix, tm: &TestMatrix, use_left: bool) -> CoordinateDecomposition {
    let vecs = if use_left { &tm.w } else { &tm.v };
    let g = vecs.adjoint_mul(basis);
    let magnitudes = (0..g.cols()).map(|j| g.col(j).iter().map(|z| z.norm()).collect()).collect();
    let m = tm.m();
    let danger: Vec<usize> = tm.spectrum.danger.iter().map(|r| r.index).collect();
    let target = (0..m).filter(|i| !danger.contains(i)).collect();
    CoordinateDecomposition {
        magnitudes,
        danger,
        target,
        unwanted: (m..tm.n()).collect(),
        left: use_left,
    }
}

/// Run metadata copied into every trace.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TraceMeta {
    pub label: String,
    pub seed: u64,
    pub d: Option<f64>,
    pub ell: usize,
    pub variant: String,
    pub n: usize,
    pub m: usize,
}

/// Everything measured at iteration `k >= 1`.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Ritz values matched to the targets, in target order.
    pub ritz_values: Vec<C64>,
    /// Residuals of the matched pairs, in target order.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// Angles between `span(X_k)` and the target space.
    pub angles: AngleReport,
    pub tan_theta1: f64,
    pub cos_theta1: f64,
    /// `tan theta_1` of the orthonormal basis `Q_k` actually carried forward.
    pub tan_theta1_basis: f64,
    pub cos_theta1_basis: f64,
    pub kappa_x: f64,
    /// `kappa(X_k C_k)` with unit-norm columns.
    pub kappa_x_scaled: f64,
    /// `sigma_min(X_k C_k)` with `C_k = diag(1/||x_i||)/sqrt(m)`.
    pub sigma_min_scaled: f64,
    /// `kappa(X_k T)` with `T = diag(1/r(lambda_1), 1, ..., 1)`.
    pub kappa_x_t: f64,
    #[serde(skip)]
    pub coords_basis: CoordinateDecomposition,
    #[serde(skip)]
    pub coords_iterate: CoordinateDecomposition,
    pub roundoff: RoundoffConstants,
    pub checks: Vec<BoundCheck>,
}

impl IterationRecord {
    pub fn check(&self, name: &str) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Measured history of one subspace-iteration run.
#[derive(Debug, Clone, Serialize)]
pub struct IterationTrace {
    pub meta: TraceMeta,
    pub rho: f64,
    pub norm_a: f64,
    pub danger: Option<DangerGeometry>,
    pub initial_angles: AngleReport,
    /// Records for `k = 1, 2, ...`.
    pub records: Vec<IterationRecord>,
    pub converged_at: Option<usize>,
    #[serde(skip)]
    pub kind: Option<MatrixKind>,
}

impl IterationTrace {
    pub fn record(&self, k: usize) -> Option<&IterationRecord> {
        k.checked_sub(1).and_then(|i| self.records.get(i))
    }

    /// `tan theta_1` of the basis that was filtered to produce iteration `k`
    /// (`Q_0` for `k = 1`).
    pub fn tan_before(&self, k: usize) -> Option<f64> {
        if k == 1 {
            Some(self.initial_angles.largest_tangent)
        } else {
            self.record(k - 1).map(|r| r.tan_theta1_basis)
        }
    }

    pub fn max_residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.max_residual).collect()
    }

    /// All checks as `(k, check)`.
    pub fn checks(&self) -> impl Iterator<Item = (usize, &BoundCheck)> {
        self.records.iter().flat_map(|r| r.checks.iter().map(move |c| (r.k, c)))
    }

    /// One row per (iteration, pair). Bound columns carry the iteration's
    /// checks in order, one per row; rows past the last check leave them empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "k",
            "pair_index",
            "ritz_value_re",
            "ritz_value_im",
            "residual",
            "tan_theta1",
            "cos_theta1",
            "kappa_x",
            "kappa_x_scaled",
            "bound_name",
            "bound_lhs",
            "bound_rhs",
            "satisfied",
        ])?;
        for r in &self.records {
            let rows = r.residuals.len().max(r.checks.len());
            for i in 0..rows {
                let mut rec = vec![r.k.to_string()];
                match (r.ritz_values.get(i), r.residuals.get(i)) {
                    (Some(v), Some(res)) => {
                        rec.push(i.to_string());
                        rec.push(format!("{:e}", v.re));
                        rec.push(format!("{:e}", v.im));
                        rec.push(format!("{res:e}"));
                    }
                    _ => rec.extend(std::iter::repeat_n(String::new(), 4)),
                }
                rec.push(format!("{:e}", r.tan_theta1));
                rec.push(format!("{:e}", r.cos_theta1));
                rec.push(format!("{:e}", r.kappa_x));
                rec.push(format!("{:e}", r.kappa_x_scaled));
                match r.checks.get(i) {
                    Some(c) => {
                        rec.push(c.name.clone());
                        rec.push(format!("{:e}", c.lhs));
                        rec.push(format!("{:e}", c.rhs));
                        rec.push(if c.inconclusive {
                            "inconclusive".to_string()
                        } else {
                            c.satisfied.to_string()
                        });
                    }
                    None => rec.extend(std::iter::repeat_n(String::new(), 4)),
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Orthonormal basis of the target eigenspace.
pub fn target_space(tm: &TestMatrix) -> Result<ComplexMatrix> {
    match tm.kind {
        MatrixKind::Normal => Ok(tm.v1()),
        MatrixKind::Diagonalizable => orth(&tm.v1()),
    }
}

/// Measures every iteration of `run` against the known eigenvectors in `tm`.
///
/// Checks recorded per iteration:
/// - `k = 1`, normal or diagonalizable: upper conditioning bound and the
///   asymptotic lower bound relaxed by 10;
/// - `k = 2`, plain QR on a normal matrix: `twice_enough`;
/// - `k >= 1`, plain QR on a normal matrix: `perturbed_one_step`;
/// - no eigenvalue within `1e-3` of a node: `one_step_contraction`.
pub fn build_trace(run: &FsiRun, tm: &TestMatrix, f: &RationalFilter, meta: TraceMeta) -> Result<IterationTrace> {
    let profile = filter_profile(f, &tm.spectrum)?;
    let geom = danger_geometry(f, &profile, &tm.spectrum.target);
    let dangerous = geom.d < 1e-3;
    let norm_a = spectral_norm(&tm.a)?;
    let norm_a_fro = tm.a.norm_fro();
    let vspace = target_space(tm)?;
    let normal = tm.kind == MatrixKind::Normal;
    let plain = run.variant == IterationVariant::PlainQr;
    let m = tm.m();
    let r1 = profile.target_values[0];

    let initial_angles = principal_angles(&run.states[0].q, &vspace)?;
    let mut records: Vec<IterationRecord> = Vec::with_capacity(run.states.len().saturating_sub(1));
    let (mut prev_tan, mut prev_cos) = (initial_angles.largest_tangent, initial_angles.cos_theta1());
    for (idx, st) in run.states.iter().enumerate().skip(1) {
        let k = st.iteration;
        let matched = match_to_targets(&st.ritz.values, &st.ritz.residuals, &tm.spectrum.target)?;
        let ritz_values: Vec<C64> = matched.iter().map(|&p| st.ritz.values[p]).collect();
        let residuals: Vec<f64> = matched.iter().map(|&p| st.ritz.residuals[p]).collect();
        let max_residual = st.max_residual();
        let angles = principal_angles(&st.x_raw, &vspace)?;
        let basis_angles = principal_angles(&st.q, &vspace)?;
        let kappa_x = condition_number(&st.x_raw)?;
        let unit = st.x_raw.normalize_columns();
        let sv = singular_values(&unit)?;
        let smin = *sv.last().expect("nonempty");
        let kappa_x_scaled = if smin > 0.0 { sv[0] / smin } else { f64::INFINITY };
        let sigma_min_scaled = smin / (m as f64).sqrt();
        let kappa_x_t = kappa_first_column_scaled(&st.x_raw, r1)?;
        let roundoff = roundoff_constants(f, &profile, st, norm_a, norm_a_fro);

        let mut checks = Vec::new();
        if k == 1 && dangerous && geom.r2 > 0.0 {
            let q0 = &run.states[idx - 1].q;
            let b = if normal {
                kappa_bounds_normal(f, tm, q0)?
            } else {
                kappa_bounds_nonnormal(f, tm, q0)?
            };
            checks.push(BoundCheck::new("kappa_x1_upper", kappa_x, b.upper));
            checks.push(BoundCheck::new("kappa_x1_lower_relaxed", b.lower, 10.0 * kappa_x));
        }
        if k == 2 && dangerous && normal && plain && m >= 2 {
            checks.push(twice_enough_check(f, tm, &run.states[idx - 1].q, &st.x_raw)?);
        }
        if normal && plain {
            checks.push(perturbed_bound_check(
                profile.rho,
                prev_tan,
                prev_cos,
                angles.largest_tangent,
                angles.cos_theta1(),
                sigma_min_scaled,
                &roundoff,
            ));
        }
        if !dangerous && plain {
            let floor = tm.n() as f64 * f64::EPSILON;
            checks.push(one_step_contraction_check(profile.rho, prev_tan, angles.largest_tangent, floor));
        }

        prev_tan = basis_angles.largest_tangent;
        prev_cos = basis_angles.cos_theta1();
        records.push(IterationRecord {
            k,
            ritz_values,
            residuals,
            max_residual,
            tan_theta1: angles.largest_tangent,
            cos_theta1: angles.cos_theta1(),
            tan_theta1_basis: basis_angles.largest_tangent,
            cos_theta1_basis: basis_angles.cos_theta1(),
            angles,
            kappa_x,
            kappa_x_scaled,
            sigma_min_scaled,
            kappa_x_t,
            coords_basis: coordinates(&st.q, tm, !normal),
            coords_iterate: coordinates(&unit, tm, !normal),
            roundoff,
            checks,
        });
    }
    Ok(IterationTrace {
        meta,
        rho: profile.rho,
        norm_a,
        danger: Some(geom).filter(|_| dangerous),
        initial_angles,
        records,
        converged_at: run.converged_at,
        kind: Some(tm.kind),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix::re;
    use crate::linalg::random::random_orthonormal;

    #[test]
    fn identical_subspaces_have_zero_angles() {
        let y = random_orthonormal(12, 3, 5, true);
        let r = principal_angles(&y, &y).unwrap();
        for (c, t) in r.cosines.iter().zip(&r.tangents) {
            assert!((c - 1.0).abs() < 1e-14);
            assert!(*t < 1e-14);
        }
    }

    #[test]
    fn planar_rotation_angle() {
        let alpha: f64 = 0.3;
        let mut y = ComplexMatrix::zeros(3, 1);
        y[(0, 0)] = re(1.0);
        let mut x = ComplexMatrix::zeros(3, 1);
        x[(0, 0)] = re(alpha.cos());
        x[(1, 0)] = re(alpha.sin());
        let r = principal_angles(&x, &y).unwrap();
        assert!((r.cosines[0] - alpha.cos()).abs() < 1e-15);
        assert!((r.sines[0] - alpha.sin()).abs() < 1e-15);
        assert!((r.largest_tangent - alpha.tan()).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_subspaces_have_infinite_tangent() {
        let x = ComplexMatrix::eye(4, 2);
        let mut y = ComplexMatrix::zeros(4, 2);
        y[(2, 0)] = re(1.0);
        y[(3, 1)] = re(1.0);
        let r = principal_angles(&x, &y).unwrap();
        assert_eq!(r.cosines, vec![0.0, 0.0]);
        assert!(r.largest_tangent.is_infinite());
    }

    #[test]
    fn tangent_ignores_column_scaling() {
        let y = random_orthonormal(10, 2, 1, false);
        let x = random_orthonormal(10, 2, 2, false);
        let xs = x.scale_columns(&[re(1e8), re(1e-3)]);
        let a = principal_angles(&x, &y).unwrap();
        let b = principal_angles(&xs, &y).unwrap();
        assert!((a.largest_tangent - b.largest_tangent).abs() <= 1e-12 * a.largest_tangent);
    }

    #[test]
    fn bound_check_tolerance() {
        assert!(BoundCheck::new("x", 1.0 + 1e-10, 1.0).satisfied);
        assert!(!BoundCheck::new("x", 1.0 + 1e-8, 1.0).satisfied);
        let c = BoundCheck::inconclusive("x", 3.0);
        assert!(c.inconclusive && c.rhs.is_infinite());
    }

    #[test]
    fn first_column_scaling() {
        let x = ComplexMatrix::from_diag(&[re(1e10), re(1.0)]);
        let k = kappa_first_column_scaled(&x, re(1e10)).unwrap();
        assert!((k - 1.0).abs() < 1e-14);
    }
}
