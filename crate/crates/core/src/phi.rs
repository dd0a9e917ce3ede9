//! Worst-case error dynamics `Phi(eta) = (rho eta / (1 - e1 (1 + eta)) + e2) / (1 - e2)`
//! for `tan theta_1` across perturbed iterations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::IterationTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiParams {
    pub rho: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl PhiParams {
    pub fn new(rho: f64, eps1: f64, eps2: f64) -> Result<Self> {
        let p = PhiParams { rho, eps1, eps2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Precondition(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.eps1 >= 0.0 && self.eps1 < 1.0) {
            return Err(Error::Precondition(format!("eps1 must lie in [0, 1), got {}", self.eps1)));
        }
        if !(self.eps2 >= 0.0 && self.eps2 < 1.0) {
            return Err(Error::Precondition(format!("eps2 must lie in [0, 1), got {}", self.eps2)));
        }
        Ok(())
    }

    /// Upper end of the domain, `-1 + 1/eps1` (infinite when `eps1 = 0`).
    pub fn domain_bound(&self) -> f64 {
        if self.eps1 > 0.0 {
            -1.0 + 1.0 / self.eps1
        } else {
            f64::INFINITY
        }
    }

    fn eval_unchecked(&self, eta: f64) -> f64 {
        (self.rho * eta / (1.0 - self.eps1 * (1.0 + eta)) + self.eps2) / (1.0 - self.eps2)
    }
}

/// `Phi(eta)` for `0 <= eta < -1 + 1/eps1`.
pub fn phi(p: &PhiParams, eta: f64) -> Result<f64> {
    let bound = p.domain_bound();
    if !(eta >= 0.0 && eta < bound) {
        return Err(Error::DomainViolation { eta, bound });
    }
    Ok(p.eval_unchecked(eta))
}

/// Roots of `Phi(eta) = eta`.
///
/// Clearing the denominator gives `eta^2 - 2 delta eta + sigma = 0` with
/// `delta = ((1 - e1)(1 - e2) + e1 e2 - rho) / (2 e1 (1 - e2))` and
/// `sigma = e2 (1 - e1) / (e1 (1 - e2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiFixedPoints {
    pub eta_minus: f64,
    pub eta_plus: f64,
    pub delta: f64,
    pub sigma: f64,
    pub exists: bool,
}

pub fn fixed_points(p: &PhiParams) -> PhiFixedPoints {
    let (e1, e2, rho) = (p.eps1, p.eps2, p.rho);
    if e1 == 0.0 {
        // Linear map: one fixed point, the other has run off to infinity.
        let slope = rho / (1.0 - e2);
        let exists = slope < 1.0;
        let eta_minus = if exists {
            e2 / ((1.0 - e2) * (1.0 - slope))
        } else {
            f64::NAN
        };
        return PhiFixedPoints {
            eta_minus,
            eta_plus: f64::INFINITY,
            delta: f64::INFINITY,
            sigma: 0.0,
            exists,
        };
    }
    let delta = ((1.0 - e1) * (1.0 - e2) + e1 * e2 - rho) / (2.0 * e1 * (1.0 - e2));
    let sigma = e2 * (1.0 - e1) / (e1 * (1.0 - e2));
    let disc = delta * delta - sigma;
    let exists = delta > 0.0 && disc > 0.0;
    let (eta_minus, eta_plus) = if exists {
        let root = disc.sqrt();
        // sigma / (delta + root) avoids cancellation when sigma << delta^2.
        (sigma / (delta + root), delta + root)
    } else {
        (f64::NAN, f64::NAN)
    };
    PhiFixedPoints {
        eta_minus,
        eta_plus,
        delta,
        sigma,
        exists,
    }
}

/// `eta_0, Phi(eta_0), ..., Phi^k(eta_0)`, stopped early if it leaves the domain.
#[derive(Debug, Clone, Serialize)]
pub struct PhiTrajectory {
    pub values: Vec<f64>,
    pub diverged: bool,
}

pub fn iterate_phi(p: &PhiParams, eta0: f64, k: usize) -> Result<PhiTrajectory> {
    p.validate()?;
    let mut values = Vec::with_capacity(k + 1);
    let bound = p.domain_bound();
    if !(eta0 >= 0.0 && eta0 < bound) {
        return Err(Error::DomainViolation { eta: eta0, bound });
    }
    values.push(eta0);
    let mut eta = eta0;
    for _ in 0..k {
        let next = p.eval_unchecked(eta);
        if !(next >= 0.0 && next < bound) || !next.is_finite() {
            return Ok(PhiTrajectory { values, diverged: true });
        }
        values.push(next);
        eta = next;
    }
    Ok(PhiTrajectory { values, diverged: false })
}

/// `rho~^k eta_0 + e2~ / (1 - rho~)` with `rho~ = rho / ((1 - e2)(1 - e1 (1 + eta_0)))`
/// and `e2~ = e2 / (1 - e2)`.
pub fn envelope_bound(p: &PhiParams, eta0: f64, k: usize) -> Result<f64> {
    p.validate()?;
    let bound = p.domain_bound();
    if !(eta0 >= 0.0 && eta0 < bound) {
        return Err(Error::DomainViolation { eta: eta0, bound });
    }
    let rho_tilde = p.rho / ((1.0 - p.eps2) * (1.0 - p.eps1 * (1.0 + eta0)));
    if !(rho_tilde < 1.0) {
        return Err(Error::VacuousBound { rho_tilde });
    }
    let e2_tilde = p.eps2 / (1.0 - p.eps2);
    let mut geo = eta0;
    for _ in 0..k {
        geo *= rho_tilde;
    }
    Ok(geo + e2_tilde / (1.0 - rho_tilde))
}

/// Iterations until stagnation, `1 + log(eta_-) / log(rho)`.
pub fn predicted_stagnation(p: &PhiParams) -> Option<f64> {
    let fp = fixed_points(p);
    if !fp.exists || !(fp.eta_minus > 0.0) {
        return None;
    }
    Some(1.0 + fp.eta_minus.ln() / p.rho.ln())
}

/// Map parameters measured on a subspace-iteration trace.
///
/// `rho` is the filter's separation ratio. `eps1` is the largest measured
/// bound on the in-space perturbation over `k >= 2`. `eps2` is the largest
/// out-of-space perturbation times `max_k 1/sigma_min(X_k C_k)`, both over `k >= 2`.
pub fn fit_params_from_trace(trace: &IterationTrace) -> Result<PhiParams> {
    let later: Vec<_> = trace.records.iter().filter(|r| r.k >= 2).collect();
    if later.is_empty() {
        return Err(Error::MissingDiagnostics("trace has no iterations past the first".into()));
    }
    let eps1 = later
        .iter()
        .map(|r| r.roundoff.target_perturbation)
        .fold(0.0, f64::max);
    let m_hat = later.iter().map(|r| 1.0 / r.sigma_min_scaled).fold(0.0, f64::max);
    let pert = later
        .iter()
        .map(|r| r.roundoff.unwanted_perturbation)
        .fold(0.0, f64::max);
    if !(eps1.is_finite() && m_hat.is_finite() && pert.is_finite()) {
        return Err(Error::MissingDiagnostics("non-finite round-off measurements".into()));
    }
    PhiParams::new(trace.rho, eps1, pert * m_hat)
}

/// `(k, measured tan theta_1, phi_k(tan theta_1 at k = 0))` for every recorded iteration.
pub fn overlay(trace: &IterationTrace, p: &PhiParams) -> Result<Vec<(usize, f64, f64)>> {
    let kmax = trace.records.last().map(|r| r.k).unwrap_or(0);
    let traj = iterate_phi(p, trace.initial_angles.largest_tangent, kmax)?;
    Ok(trace
        .records
        .iter()
        .map(|r| (r.k, r.tan_theta1, traj.values.get(r.k).copied().unwrap_or(f64::INFINITY)))
        .collect())
}

/// CSV `k,eta,bound` for `k = 0..=k_max`.
pub fn write_trajectory_csv(path: &Path, p: &PhiParams, eta0: f64, k_max: usize) -> Result<()> {
    let traj = iterate_phi(p, eta0, k_max)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "eta", "bound"])?;
    for (k, eta) in traj.values.iter().enumerate() {
        let b = envelope_bound(p, eta0, k).map(|b| format!("{b:e}")).unwrap_or_default();
        w.write_record([k.to_string(), format!("{eta:e}"), b])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig() -> PhiParams {
        PhiParams::new(1e-4, 1e-5, 1e-14).unwrap()
    }

    #[test]
    fn unperturbed_map_is_linear() {
        let p = PhiParams::new(0.3, 0.0, 0.0).unwrap();
        assert_eq!(phi(&p, 2.0).unwrap(), 0.3 * 2.0);
        let q = PhiParams::new(0.3, 1e-3, 0.0).unwrap();
        assert_eq!(phi(&q, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn reordered_evaluation_agrees() {
        let p = fig();
        let eta = 100.0;
        let a = phi(&p, eta).unwrap();
        // Independent grouping: rho eta (1 - e2)^{-1} / (1 - e1 - e1 eta) + e2 / (1 - e2).
        let b = (p.rho * eta / (1.0 - p.eps2)) / ((1.0 - p.eps1) - p.eps1 * eta) + p.eps2 / (1.0 - p.eps2);
        assert!((a - b).abs() <= 1e-14 * a);
    }

    #[test]
    fn domain_violation_reports_bound() {
        let p = fig();
        match phi(&p, 1e6) {
            Err(Error::DomainViolation { bound, .. }) => assert!((bound - (1e5 - 1.0)).abs() < 1e-6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_noise_fixed_points() {
        let p = PhiParams::new(0.5, 1e-3, 0.0).unwrap();
        let fp = fixed_points(&p);
        assert!(fp.exists);
        assert_eq!(fp.eta_minus, 0.0);
        assert!((fp.eta_plus - 2.0 * fp.delta).abs() <= 1e-15 * fp.eta_plus);
    }

    #[test]
    fn linear_case_fixed_point() {
        let p = PhiParams::new(0.5, 0.0, 1e-10).unwrap();
        let fp = fixed_points(&p);
        let x = fp.eta_minus;
        assert!((phi(&p, x).unwrap() - x).abs() <= 1e-15 * x);
    }

    #[test]
    fn envelope_is_exact_without_noise() {
        let p = PhiParams::new(0.25, 0.0, 0.0).unwrap();
        let t = iterate_phi(&p, 3.0, 8).unwrap();
        for k in 0..=8 {
            assert_eq!(envelope_bound(&p, 3.0, k).unwrap(), t.values[k]);
        }
    }

    #[test]
    fn vacuous_envelope_is_an_error() {
        let p = PhiParams::new(0.9, 0.05, 0.0).unwrap();
        assert!(matches!(envelope_bound(&p, 5.0, 3), Err(Error::VacuousBound { .. })));
    }

    #[test]
    fn trajectory_above_upper_fixed_point_grows() {
        let p = PhiParams::new(0.5, 1e-2, 1e-8).unwrap();
        let fp = fixed_points(&p);
        let t = iterate_phi(&p, fp.eta_plus * 1.01, 50).unwrap();
        assert!(t.values[1] > t.values[0]);
        assert!(t.diverged);
    }

    #[test]
    fn fixed_point_trajectory_is_constant() {
        let p = fig();
        let fp = fixed_points(&p);
        let t = iterate_phi(&p, fp.eta_minus, 5).unwrap();
        for v in &t.values {
            assert!((v - fp.eta_minus).abs() <= 1e-12 * fp.eta_minus);
        }
    }
}
