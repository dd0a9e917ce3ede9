//! Shift-and-invert Arnoldi with full reorthogonalization, two ways of
//! extracting eigenpairs, and a restart from the Ritz vector that the first
//! filtered vector points at.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::RationalFilter;
use crate::linalg::eig::pair_residuals;
use crate::linalg::{dot, eig_dense, mgs_orthogonalize, norm2, ComplexMatrix, GramSchmidt, ShiftedLu, C64};
use crate::subspace::{rayleigh_ritz, RitzPairs};

/// Alignment below which a restart finds no dominant direction.
pub const MIN_RESTART_ALIGNMENT: f64 = 1e-3;
/// Default `||y_2|| / ||q_1||` that triggers an automatic restart.
pub const AUTO_RESTART_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartMode {
    Off,
    /// Restart once the second basis vector exists.
    After2,
    /// As `After2`, but only when the first solve amplified `q_1` past a threshold.
    Auto,
}

impl fmt::Display for RestartMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Off => "off",
            Self::After2 => "after2",
            Self::Auto => "auto",
        })
    }
}

impl FromStr for RestartMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" | "none" => Ok(Self::Off),
            "after2" | "after_2" => Ok(Self::After2),
            "auto" => Ok(Self::Auto),
            other => Err(Error::Config(format!("unknown restart mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RestartSource {
    /// Restarted from Ritz pair `index` with `|y_2^* v| / ||y_2||` equal to `alignment`.
    RitzVector { index: usize, value: C64, alignment: f64 },
    /// No Ritz vector was aligned with `y_2`; the basis was kept.
    Skipped { max_alignment: f64 },
    /// Automatic mode saw no amplification; the basis was kept.
    BelowThreshold { amplification: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartEvent {
    /// Total solves performed when the restart was considered.
    pub step: usize,
    pub source: RestartSource,
}

/// Arnoldi decomposition `s(A) Q_k = Q_{k+1} H_k` with `s(A) = (zI - A)^{-1}`.
#[derive(Debug, Clone)]
pub struct ArnoldiState {
    /// Orthonormal `[q_1, ..., q_{k+1}]`; only `k` columns after a breakdown.
    pub basis: ComplexMatrix,
    /// Columns of the `(k+1) x k` Hessenberg matrix; column `j` has `j + 2` entries.
    pub h_columns: Vec<Vec<C64>>,
    pub shift: C64,
    pub restart_log: Vec<RestartEvent>,
    /// `s(A) q_1` before orthogonalization, kept for the restart test.
    pub first_iterate: Option<Vec<C64>>,
    /// Set once a new vector fell into the span of the basis.
    pub breakdown: bool,
    /// Solves since the beginning of the run, across restarts.
    pub total_steps: usize,
}

impl ArnoldiState {
    pub fn new(q1: &[C64], shift: C64) -> Result<Self> {
        let nrm = norm2(q1);
        if !(nrm > 0.0) || !nrm.is_finite() {
            return Err(Error::Precondition("starting vector must be nonzero and finite".into()));
        }
        let q: Vec<C64> = q1.iter().map(|x| x / nrm).collect();
        Self::from_basis(ComplexMatrix::from_columns(&[q])?, shift)
    }

    /// Starts from an orthonormal block with no steps taken yet.
    pub fn from_basis(basis: ComplexMatrix, shift: C64) -> Result<Self> {
        Ok(ArnoldiState {
            basis,
            h_columns: Vec::new(),
            shift,
            restart_log: Vec::new(),
            first_iterate: None,
            breakdown: false,
            total_steps: 0,
        })
    }

    /// Solves since the last (re)start.
    pub fn k(&self) -> usize {
        self.h_columns.len()
    }

    /// The `(k+1) x k` Hessenberg matrix, `None` before the first step.
    pub fn hessenberg(&self) -> Option<ComplexMatrix> {
        let k = self.k();
        if k == 0 {
            return None;
        }
        let mut h = ComplexMatrix::zeros(k + 1, k);
        for (j, col) in self.h_columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                h[(i, j)] = v;
            }
        }
        Some(h)
    }

    /// Leading square block `H_k`.
    pub fn square_hessenberg(&self) -> Option<ComplexMatrix> {
        let k = self.k();
        self.hessenberg().map(|h| h.block(0, k, 0, k))
    }

    /// `||s(A) Q_k - Q_{k+1} H_k||_F` using the stored LU.
    pub fn relation_residual(&self, lu: &ShiftedLu) -> Result<f64> {
        let Some(h) = self.hessenberg() else {
            return Ok(0.0);
        };
        let k = self.k();
        let lhs = lu.solve(&self.basis.columns_range(0, k))?;
        let rows = self.basis.cols().min(k + 1);
        let rhs = self.basis.columns_range(0, rows).matmul(&h.block(0, rows, 0, k));
        Ok(lhs.sub(&rhs).norm_fro())
    }
}

/// Shift-and-invert Arnoldi for one matrix and shift, with the LU kept.
pub struct Arnoldi<'a> {
    pub a: &'a ComplexMatrix,
    pub lu: ShiftedLu,
}

impl<'a> Arnoldi<'a> {
    pub fn new(a: &'a ComplexMatrix, z: C64) -> Result<Self> {
        Ok(Arnoldi {
            a,
            lu: ShiftedLu::new(a, z)?,
        })
    }

    pub fn shift(&self) -> C64 {
        self.lu.z
    }

    /// `y = s(A) q_last`, orthogonalized twice against the basis.
    pub fn step(&self, state: &ArnoldiState) -> Result<ArnoldiState> {
        if state.breakdown {
            return Ok(state.clone());
        }
        let k = state.k();
        let nb = state.basis.cols();
        let last = state.basis.columns_range(nb - 1, nb);
        let y = self.lu.solve(&last)?;
        let y: Vec<C64> = y.col(0).to_vec();
        if !y.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite(format!("shifted solve at step {}", state.total_steps + 1)));
        }
        let gs = mgs_orthogonalize(&y, &state.basis)?;
        let mut col: Vec<C64> = gs.coeffs().to_vec();
        col.push(C64::new(gs.residual_norm(), 0.0));
        let mut next = state.clone();
        next.h_columns.push(col);
        next.total_steps += 1;
        if k == 0 {
            next.first_iterate = Some(y);
        }
        match gs {
            GramSchmidt::Vector { q, .. } => {
                next.basis = state.basis.hcat(&ComplexMatrix::from_columns(&[q])?);
            }
            GramSchmidt::Breakdown { .. } => {
                next.breakdown = true;
            }
        }
        Ok(next)
    }
}

/// One Arnoldi step; factors `zI - A` on every call.
pub fn arnoldi_step(a: &ComplexMatrix, z: C64, state: &ArnoldiState) -> Result<ArnoldiState> {
    Arnoldi::new(a, z)?.step(state)
}

fn sorted_by_shift(pairs: RitzPairs, z: C64) -> RitzPairs {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&i, &j| (pairs.values[i] - z).norm().total_cmp(&(pairs.values[j] - z).norm()));
    RitzPairs {
        values: order.iter().map(|&i| pairs.values[i]).collect(),
        vectors: pairs.vectors.select_columns(&order),
        residuals: order.iter().map(|&i| pairs.residuals[i]).collect(),
    }
}

/// Eigenpairs of `H_k` mapped back by `lambda = z - 1/theta`, with vectors
/// `Q_k x` and residuals against `A`. Sorted by distance to the shift.
pub fn extract_hessenberg(a: &ComplexMatrix, state: &ArnoldiState) -> Result<RitzPairs> {
    let k = state.k();
    if k == 0 {
        return Err(Error::Precondition("Hessenberg extraction needs at least one step".into()));
    }
    let hk = state.square_hessenberg().expect("k >= 1");
    let eig = eig_dense(&hk).map_err(|e| e.context("Hessenberg eigenvalues"))?;
    let z = state.shift;
    let values: Vec<C64> = eig
        .eigenvalues
        .iter()
        .map(|&t| if t == C64::new(0.0, 0.0) { C64::new(f64::INFINITY, 0.0) } else { z - C64::new(1.0, 0.0) / t })
        .collect();
    let vectors = state.basis.columns_range(0, k).matmul(&eig.eigenvectors).normalize_columns();
    let residuals = pair_residuals(a, &values, &vectors)
        .into_iter()
        .map(|r| if r.is_finite() { r } else { f64::INFINITY })
        .collect();
    Ok(sorted_by_shift(RitzPairs { values, vectors, residuals }, z))
}

/// Rayleigh-Ritz on every basis vector, sorted by distance to the shift.
pub fn extract_rayleigh_ritz(a: &ComplexMatrix, state: &ArnoldiState) -> Result<RitzPairs> {
    let pairs = rayleigh_ritz(a, &state.basis, None)?;
    Ok(sorted_by_shift(pairs, state.shift))
}

/// Restarts from the Ritz vector most aligned with `y_2 = s(A) q_1`.
///
/// Needs at least one step since the last start. If every alignment
/// `|y_2^* v| / ||y_2||` is below `1e-3`, the state is returned unchanged
/// apart from a logged notice.
pub fn ritz_restart(a: &ComplexMatrix, state: &ArnoldiState) -> Result<ArnoldiState> {
    let y2 = state
        .first_iterate
        .as_ref()
        .ok_or_else(|| Error::Precondition("restart needs the first filtered vector".into()))?;
    let pairs = extract_rayleigh_ritz(a, state)?;
    let ynorm = norm2(y2);
    let (best, alignment) = (0..pairs.len())
        .map(|i| (i, dot(pairs.vectors.col(i), y2).norm() / ynorm))
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .expect("at least one Ritz pair");
    let mut next = state.clone();
    if alignment < MIN_RESTART_ALIGNMENT {
        next.restart_log.push(RestartEvent {
            step: state.total_steps,
            source: RestartSource::Skipped {
                max_alignment: alignment,
            },
        });
        return Ok(next);
    }
    next.basis = ComplexMatrix::from_columns(&[pairs.vectors.col(best).to_vec()])?;
    next.h_columns.clear();
    next.first_iterate = None;
    next.breakdown = false;
    next.restart_log.push(RestartEvent {
        step: state.total_steps,
        source: RestartSource::RitzVector {
            index: best,
            value: pairs.values[best],
            alignment,
        },
    });
    Ok(next)
}

/// Snapshots after every solve of a run.
#[derive(Debug, Clone)]
pub struct ArnoldiRun {
    pub mode: RestartMode,
    /// `states[i]` follows solve `i + 1`; a restart replaces the snapshot of
    /// the step it followed.
    pub states: Vec<ArnoldiState>,
}

impl ArnoldiRun {
    pub fn last(&self) -> &ArnoldiState {
        self.states.last().expect("run has at least one step")
    }

    pub fn restart_log(&self) -> &[RestartEvent] {
        &self.last().restart_log
    }
}

/// Runs `total_steps` solves from `q1`, restarting after the first solve
/// according to `mode`. Stops early on a lucky breakdown.
pub fn run_arnoldi(
    a: &ComplexMatrix,
    z: C64,
    q1: &[C64],
    total_steps: usize,
    mode: RestartMode,
    auto_threshold: f64,
) -> Result<ArnoldiRun> {
    if total_steps == 0 {
        return Err(Error::Precondition("at least one Arnoldi step is required".into()));
    }
    let engine = Arnoldi::new(a, z)?;
    let mut state = ArnoldiState::new(q1, z)?;
    let mut states = Vec::with_capacity(total_steps);
    for step in 1..=total_steps {
        state = engine.step(&state)?;
        if step == 1 && mode != RestartMode::Off && !state.breakdown {
            let amplification = norm2(state.first_iterate.as_ref().expect("set on first step"));
            if mode == RestartMode::After2 || amplification >= auto_threshold {
                state = ritz_restart(a, &state)?;
            } else {
                state.restart_log.push(RestartEvent {
                    step,
                    source: RestartSource::BelowThreshold { amplification },
                });
            }
        }
        states.push(state.clone());
        if state.breakdown {
            break;
        }
    }
    Ok(ArnoldiRun { mode, states })
}

/// The shift-and-invert filter with the same pole, for ordering and profiles.
pub fn shift_invert_filter(z: C64) -> RationalFilter {
    RationalFilter::shift_invert(z)
}
