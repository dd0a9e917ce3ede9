//! JSON experiment configuration and its validation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arnoldi::RestartMode;
use crate::error::{Error, Result};
use crate::subspace::IterationVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Fig1Arnoldi,
    Fig1Fsi,
    Fig2QuadratureRefine,
    Fig2IterationRefine,
    #[serde(rename = "fig3_5_normal_danger")]
    Fig35NormalDanger,
    Fig6Nonnormal,
    Fig6Phi,
    Fig7Restart,
    Fig8MultiDanger,
    Custom,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Self::Fig1Arnoldi,
        Self::Fig1Fsi,
        Self::Fig2QuadratureRefine,
        Self::Fig2IterationRefine,
        Self::Fig35NormalDanger,
        Self::Fig6Nonnormal,
        Self::Fig6Phi,
        Self::Fig7Restart,
        Self::Fig8MultiDanger,
        Self::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fig1Arnoldi => "fig1_arnoldi",
            Self::Fig1Fsi => "fig1_fsi",
            Self::Fig2QuadratureRefine => "fig2_quadrature_refine",
            Self::Fig2IterationRefine => "fig2_iteration_refine",
            Self::Fig35NormalDanger => "fig3_5_normal_danger",
            Self::Fig6Nonnormal => "fig6_nonnormal",
            Self::Fig6Phi => "fig6_phi",
            Self::Fig7Restart => "fig7_restart",
            Self::Fig8MultiDanger => "fig8_multi_danger",
            Self::Custom => "custom",
        }
    }

    pub fn is_arnoldi(self) -> bool {
        matches!(self, Self::Fig1Arnoldi | Self::Fig7Restart)
    }

    /// Experiments built on subspace iteration with a configurable variant.
    pub fn is_fsi(self) -> bool {
        !self.is_arnoldi() && self != Self::Fig6Phi
    }

    /// Targets of the experiment's spectrum, danger included.
    pub fn target_count(self) -> usize {
        match self {
            Self::Fig2QuadratureRefine | Self::Fig2IterationRefine => 2,
            Self::Fig8MultiDanger => 15,
            Self::Fig6Phi => 0,
            _ => 10,
        }
    }

    pub fn default_n(self) -> usize {
        match self {
            Self::Fig8MultiDanger => 200,
            Self::Fig6Phi => 0,
            _ => 100,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|e| e.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Optional knobs; `None` keeps the experiment default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub d: Option<f64>,
    pub theta: Option<f64>,
    pub ell: Option<usize>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub variant: Option<IterationVariant>,
    pub restart_mode: Option<RestartMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub overrides: Overrides,
}

fn default_seed() -> u64 {
    1
}

pub const MAX_N: usize = 400;
pub const MAX_ITERS: usize = 200;
pub const MAX_ELL: usize = 128;

impl ExperimentConfig {
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        ExperimentConfig {
            experiment,
            seed,
            overrides: Overrides::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every override against the experiment's admissible range.
    pub fn validate(&self) -> Result<()> {
        let e = self.experiment;
        let o = &self.overrides;
        let bad = |msg: String| Err(Error::Config(format!("{e}: {msg}")));

        if e == Experiment::Fig6Phi {
            let extra = o.d.is_some()
                || o.theta.is_some()
                || o.ell.is_some()
                || o.m.is_some()
                || o.n.is_some()
                || o.tol.is_some()
                || o.variant.is_some()
                || o.restart_mode.is_some();
            if extra {
                return bad("only max_iters can be overridden".into());
            }
        }
        if let Some(d) = o.d {
            if !(d > 0.0 && d <= 0.25) {
                return bad(format!("d = {d:e} must lie in (0, 0.25]"));
            }
        }
        if let Some(t) = o.theta {
            if !t.is_finite() {
                return bad("theta must be finite".into());
            }
        }
        if let Some(ell) = o.ell {
            if e.is_arnoldi() || matches!(e, Experiment::Fig1Fsi) {
                if ell != 1 {
                    return bad(format!("shift-and-invert experiments use ell = 1, got {ell}"));
                }
            } else if ell < 2 || ell % 2 != 0 || ell > MAX_ELL {
                return bad(format!("ell = {ell} must be even and in [2, {MAX_ELL}] so a pole sits at z = 10"));
            }
        }
        let n = o.n.unwrap_or(e.default_n());
        if let Some(n) = o.n {
            let lo = e.target_count() + 10;
            if n < lo || n > MAX_N {
                return bad(format!("n = {n} must lie in [{lo}, {MAX_N}]"));
            }
        }
        if let Some(m) = o.m {
            if e.is_arnoldi() {
                return bad("m has no meaning for single-vector Arnoldi".into());
            }
            if e == Experiment::Custom {
                if m < 2 || 2 * m > n {
                    return bad(format!("m = {m} must lie in [2, n/2]"));
                }
            } else if m != e.target_count() {
                return bad(format!("m = {m} must equal the {} targets of this experiment", e.target_count()));
            }
        }
        if let Some(k) = o.max_iters {
            if k == 0 || k > MAX_ITERS {
                return bad(format!("max_iters = {k} must lie in [1, {MAX_ITERS}]"));
            }
            if e.is_arnoldi() && k + 1 > n {
                return bad(format!("{k} Arnoldi steps need n > {k}"));
            }
        }
        if let Some(tol) = o.tol {
            if !(tol >= 0.0 && tol.is_finite()) {
                return bad(format!("tol = {tol} must be finite and nonnegative"));
            }
        }
        if o.variant.is_some() && !e.is_fsi() {
            return bad("variant applies to subspace-iteration experiments only".into());
        }
        if o.restart_mode.is_some() && !e.is_arnoldi() {
            return bad("restart_mode applies to Arnoldi experiments only".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_through_json() {
        for e in Experiment::ALL {
            let cfg = ExperimentConfig::new(e, 4);
            let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
    }

    #[test]
    fn out_of_range_overrides_are_rejected() {
        let cases = [
            r#"{"experiment":"fig3_5_normal_danger","overrides":{"d":0.0}}"#,
            r#"{"experiment":"fig3_5_normal_danger","overrides":{"ell":7}}"#,
            r#"{"experiment":"fig1_arnoldi","overrides":{"ell":4}}"#,
            r#"{"experiment":"fig8_multi_danger","overrides":{"m":10}}"#,
            r#"{"experiment":"fig6_phi","overrides":{"d":1e-3}}"#,
            r#"{"experiment":"fig2_iteration_refine","overrides":{"restart_mode":"auto"}}"#,
            r#"{"experiment":"fig7_restart","overrides":{"variant":"schur"}}"#,
            r#"{"experiment":"custom","overrides":{"n":5}}"#,
            r#"{"experiment":"custom","unknown":1}"#,
            r#"{"experiment":"nope"}"#,
        ];
        for c in cases {
            let err = ExperimentConfig::from_json(c).unwrap_err();
            assert!(err.is_config(), "{c}: {err}");
        }
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(r#"{"experiment":"fig7_restart"}"#).unwrap();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.overrides, Overrides::default());
    }
}
