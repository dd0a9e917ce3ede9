//! Rational filters `r(z) = sum_j w_j / (z_j - z)` and their action on matrices.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::matrix::{ComplexMatrix, C64, ZERO};
use crate::linalg::{shifted_backward_error, ShiftedLu, UNIT_ROUNDOFF};
use crate::spectrum::SpectrumSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFilter", into = "RawFilter")]
pub struct RationalFilter {
    nodes: Vec<C64>,
    weights: Vec<C64>,
}

#[derive(Serialize, Deserialize)]
struct RawFilter {
    nodes: Vec<C64>,
    weights: Vec<C64>,
}

impl TryFrom<RawFilter> for RationalFilter {
    type Error = Error;
    fn try_from(raw: RawFilter) -> Result<Self> {
        RationalFilter::new(raw.nodes, raw.weights)
    }
}

impl From<RationalFilter> for RawFilter {
    fn from(f: RationalFilter) -> Self {
        RawFilter {
            nodes: f.nodes,
            weights: f.weights,
        }
    }
}

/// Where the trapezoid nodes sit on the circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NodePlacement {
    /// Angles `2 pi (j - 1/2) / ell`; no node on the real axis for even `ell`.
    #[default]
    HalfStep,
    /// Angles `2 pi j / ell`; nodes at both real endpoints `c +- radius` for even `ell`.
    Endpoint,
}

impl NodePlacement {
    fn offset(self) -> f64 {
        match self {
            NodePlacement::HalfStep => -0.5,
            NodePlacement::Endpoint => 0.0,
        }
    }
}

impl RationalFilter {
    pub fn new(nodes: Vec<C64>, weights: Vec<C64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidFilter("a filter needs at least one node".into()));
        }
        if nodes.len() != weights.len() {
            return Err(Error::InvalidFilter(format!(
                "{} nodes but {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        if nodes.iter().chain(&weights).any(|z| !z.is_finite()) {
            return Err(Error::InvalidFilter("non-finite node or weight".into()));
        }
        if weights.iter().all(|w| *w == ZERO) {
            return Err(Error::InvalidFilter("all weights are zero".into()));
        }
        let zmax = nodes.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let sep = 1e3 * UNIT_ROUNDOFF * zmax;
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                if (nodes[i] - nodes[j]).norm() <= sep {
                    return Err(Error::InvalidFilter(format!("nodes {i} and {j} coincide")));
                }
            }
        }
        Ok(Self { nodes, weights })
    }

    /// Shift-and-invert `s(z) = 1 / (pole - z)`.
    pub fn shift_invert(pole: C64) -> Self {
        Self {
            nodes: vec![pole],
            weights: vec![C64::new(1.0, 0.0)],
        }
    }

    /// Trapezoid rule for the Cauchy integral of the disk indicator, half-step nodes.
    pub fn circle(center: C64, radius: f64, ell: usize) -> Result<Self> {
        Self::circle_with(center, radius, ell, NodePlacement::HalfStep)
    }

    pub fn circle_with(center: C64, radius: f64, ell: usize, placement: NodePlacement) -> Result<Self> {
        if ell < 2 {
            return Err(Error::InvalidFilter(format!("circle filter needs ell >= 2, got {ell}")));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidFilter(format!("radius must be positive, got {radius}")));
        }
        let mut nodes = Vec::with_capacity(ell);
        let mut weights = Vec::with_capacity(ell);
        for j in 0..ell {
            let phi = 2.0 * PI * (j as f64 + 1.0 + placement.offset()) / ell as f64;
            let e = unit_phase(phi);
            nodes.push(center + e * radius);
            weights.push(e * (radius / ell as f64));
        }
        Self::new(nodes, weights)
    }

    pub fn nodes(&self) -> &[C64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[C64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the node closest to `z`.
    pub fn nearest_node(&self, z: C64) -> usize {
        (0..self.len())
            .min_by(|&i, &j| (self.nodes[i] - z).norm().total_cmp(&(self.nodes[j] - z).norm()))
            .expect("nonempty")
    }

    fn check_pole(&self, lambda: C64) -> Result<()> {
        for &z in &self.nodes {
            let dist = (z - lambda).norm();
            if dist == 0.0 || dist <= UNIT_ROUNDOFF * z.norm().max(lambda.norm()) {
                return Err(Error::PoleHit { lambda, node: z });
            }
        }
        Ok(())
    }

    /// `r(lambda)`, terms summed pairwise in node order.
    pub fn eval_scalar(&self, lambda: C64) -> Result<C64> {
        self.check_pole(lambda)?;
        let terms: Vec<C64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w / (z - lambda))
            .collect();
        Ok(pairwise_sum(&terms))
    }

    /// `sum_j |w_j| / |z_j - lambda|`.
    pub fn eval_majorant(&self, lambda: C64) -> Result<f64> {
        self.check_pole(lambda)?;
        Ok(self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w.norm() / (z - lambda).norm())
            .sum())
    }

    /// Divides every weight by the weight at `pole_index`.
    pub fn normalize_at_pole(&self, pole_index: usize) -> Result<Self> {
        let w0 = *self
            .weights
            .get(pole_index)
            .ok_or_else(|| Error::InvalidFilter(format!("pole index {pole_index} out of range")))?;
        if w0 == ZERO {
            return Err(Error::InvalidFilter(format!("weight at pole {pole_index} is zero")));
        }
        Ok(Self {
            nodes: self.nodes.clone(),
            weights: self.weights.iter().map(|w| w / w0).collect(),
        })
    }

    /// Same filter with every weight multiplied by `s`.
    pub fn scaled(&self, s: C64) -> Self {
        Self {
            nodes: self.nodes.clone(),
            weights: self.weights.iter().map(|w| w * s).collect(),
        }
    }
}

fn unit_phase(phi: f64) -> C64 {
    let (s, c) = phi.sin_cos();
    C64::new(c, s)
}

pub(crate) fn pairwise_sum(x: &[C64]) -> C64 {
    match x.len() {
        0 => ZERO,
        1 => x[0],
        2 => x[0] + x[1],
        n => pairwise_sum(&x[..n / 2]) + pairwise_sum(&x[n / 2..]),
    }
}

/// Result of applying a filter with per-solve bookkeeping.
#[derive(Debug, Clone)]
pub struct FilterApplication {
    /// `sum_j w_j X^(j)`.
    pub x: ComplexMatrix,
    /// `[node][column]` backward-error constant of each shifted solve,
    /// `||q_i - (z_j I - A) x_i|| / (u ||A||_F ||x_i||)`.
    pub solve_gamma: Vec<Vec<f64>>,
    /// `[node][column]` norm of each `X^(j)` column.
    pub part_norms: Vec<Vec<f64>>,
}

impl FilterApplication {
    pub fn max_gamma(&self) -> f64 {
        self.solve_gamma.iter().flatten().copied().fold(0.0, f64::max)
    }
}

/// `X = r(A) Q` via one LU-based shifted solve per node.
pub fn apply_filter(f: &RationalFilter, a: &ComplexMatrix, q: &ComplexMatrix) -> Result<ComplexMatrix> {
    Ok(apply_filter_traced(f, a, q)?.x)
}

/// As [`apply_filter`], also measuring the backward error of every solve.
/// Solves run concurrently; the weighted sum is accumulated serially in node order.
pub fn apply_filter_traced(f: &RationalFilter, a: &ComplexMatrix, q: &ComplexMatrix) -> Result<FilterApplication> {
    if !a.is_square() || q.rows() != a.rows() {
        return Err(Error::Shape(format!(
            "apply_filter: A is {}x{}, Q is {}x{}",
            a.rows(),
            a.cols(),
            q.rows(),
            q.cols()
        )));
    }
    let parts: Vec<Result<(ComplexMatrix, Vec<f64>)>> = f
        .nodes
        .par_iter()
        .map(|&z| {
            let xj = ShiftedLu::new(a, z)?.solve(q)?;
            let g = shifted_backward_error(a, z, &xj, q);
            Ok((xj, g))
        })
        .collect();
    let mut x = ComplexMatrix::zeros(q.rows(), q.cols());
    let mut solve_gamma = Vec::with_capacity(f.len());
    let mut part_norms = Vec::with_capacity(f.len());
    for (part, &w) in parts.into_iter().zip(&f.weights) {
        let (xj, g) = part?;
        for j in 0..x.cols() {
            let dst = x.col_mut(j);
            for (d, s) in dst.iter_mut().zip(xj.col(j)) {
                *d += w * s;
            }
        }
        part_norms.push(xj.column_norms());
        solve_gamma.push(g);
    }
    Ok(FilterApplication {
        x,
        solve_gamma,
        part_norms,
    })
}

/// Filter values over a partitioned spectrum.
#[derive(Debug, Clone, Serialize)]
pub struct FilterSpectrumProfile {
    /// `r(lambda_i)` on targets, ordered by `|r|` descending.
    pub target_values: Vec<C64>,
    /// Position of each entry of `target_values` in the input target list.
    pub target_order: Vec<usize>,
    pub unwanted_values: Vec<C64>,
    pub unwanted_max: f64,
    pub target_min: f64,
    pub rho: f64,
    /// Majorant on targets, same order as `target_values`.
    pub majorant_values: Vec<f64>,
    pub majorant_unwanted: Vec<f64>,
}

impl FilterSpectrumProfile {
    /// `max_i rtilde(lambda_i) / |r(lambda_i)|` over targets.
    pub fn target_majorant_ratio(&self) -> f64 {
        self.majorant_values
            .iter()
            .zip(&self.target_values)
            .map(|(m, r)| m / r.norm())
            .fold(0.0, f64::max)
    }

    /// `max rtilde` over the unwanted eigenvalues (0 when there are none).
    pub fn unwanted_majorant_max(&self) -> f64 {
        self.majorant_unwanted.iter().copied().fold(0.0, f64::max)
    }

    /// `|r(lambda_2)|` in the filtered ordering, or 0 for a single target.
    pub fn second_target_abs(&self) -> f64 {
        self.target_values.get(1).map(|z| z.norm()).unwrap_or(0.0)
    }
}

pub fn filter_profile(f: &RationalFilter, spectrum: &SpectrumSpec) -> Result<FilterSpectrumProfile> {
    if spectrum.target.is_empty() {
        return Err(Error::InvalidSpectrum("no target eigenvalues".into()));
    }
    let tv: Vec<C64> = spectrum.target.iter().map(|&l| f.eval_scalar(l)).collect::<Result<_>>()?;
    let tm: Vec<f64> = spectrum.target.iter().map(|&l| f.eval_majorant(l)).collect::<Result<_>>()?;
    let uv: Vec<C64> = spectrum.unwanted.iter().map(|&l| f.eval_scalar(l)).collect::<Result<_>>()?;
    let um: Vec<f64> = spectrum.unwanted.iter().map(|&l| f.eval_majorant(l)).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..tv.len()).collect();
    order.sort_by(|&i, &j| tv[j].norm().total_cmp(&tv[i].norm()));
    let target_values: Vec<C64> = order.iter().map(|&i| tv[i]).collect();
    let majorant_values: Vec<f64> = order.iter().map(|&i| tm[i]).collect();
    let target_min = target_values.last().expect("nonempty").norm();
    let unwanted_max = uv.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let rho = unwanted_max / target_min;
    if !(rho < 1.0) {
        return Err(Error::SeparationFailure { rho });
    }
    Ok(FilterSpectrumProfile {
        target_values,
        target_order: order,
        unwanted_values: uv,
        unwanted_max,
        target_min,
        rho,
        majorant_values,
        majorant_unwanted: um,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix::{c, re};

    #[test]
    fn single_node_values() {
        let f = RationalFilter::shift_invert(re(2.0));
        assert_eq!(f.eval_scalar(re(0.0)).unwrap(), re(0.5));
        let g = RationalFilter::shift_invert(re(10.0));
        let v = g.eval_scalar(re(10.0 + 1e-10)).unwrap();
        assert!(v.re < 0.0 && (v.re + 1e10).abs() <= 1e-5 * 1e10);
        assert_eq!(g.eval_majorant(re(3.0)).unwrap(), g.eval_scalar(re(3.0)).unwrap().norm());
    }

    #[test]
    fn cancellation_against_majorant() {
        // Nodes +-i with equal weights cancel at the origin.
        let f = RationalFilter::new(vec![c(0.0, 1.0), c(0.0, -1.0)], vec![re(1.0), re(1.0)]).unwrap();
        assert_eq!(f.eval_scalar(re(0.0)).unwrap(), ZERO);
        assert_eq!(f.eval_majorant(re(0.0)).unwrap(), 2.0);
        // Opposite weights on the same nodes add up instead.
        let g = RationalFilter::new(vec![c(0.0, 1.0), c(0.0, -1.0)], vec![re(1.0), re(-1.0)]).unwrap();
        assert_eq!(g.eval_scalar(re(0.0)).unwrap(), c(0.0, -2.0));
    }

    #[test]
    fn pole_hit() {
        let f = RationalFilter::shift_invert(re(1.0));
        assert!(matches!(f.eval_scalar(re(1.0)), Err(Error::PoleHit { .. })));
        assert!(matches!(f.eval_majorant(re(1.0)), Err(Error::PoleHit { .. })));
    }

    #[test]
    fn center_value_against_reversed_sum() {
        let f = RationalFilter::circle(re(12.5), 2.5, 8).unwrap();
        let lam = re(12.5);
        let mut rev = ZERO;
        for (z, w) in f.nodes().iter().zip(f.weights()).rev() {
            rev += w / (z - lam);
        }
        let v = f.eval_scalar(lam).unwrap();
        assert!((v - rev).norm() <= 1e-15 * rev.norm());
        assert!((v - re(1.0)).norm() < 1e-3);
    }

    #[test]
    fn circle_closed_forms() {
        // Half-step nodes sum to 1 / (1 + w^ell); endpoint nodes to 1 / (1 - w^ell).
        let (cen, rad) = (12.5, 2.5);
        let lam = re(cen + 2.0 * rad);
        let half = RationalFilter::circle(re(cen), rad, 8).unwrap();
        let end = RationalFilter::circle_with(re(cen), rad, 8, NodePlacement::Endpoint).unwrap();
        let h = half.eval_scalar(lam).unwrap();
        let e = end.eval_scalar(lam).unwrap();
        assert!((h.norm() - 1.0 / 257.0).abs() <= 1e-14);
        assert!((e.norm() - 1.0 / 255.0).abs() <= 1e-14);
    }

    #[test]
    fn endpoint_placement_has_pole_at_left_end() {
        let f = RationalFilter::circle_with(re(12.5), 2.5, 16, NodePlacement::Endpoint).unwrap();
        let j = f.nearest_node(re(10.0));
        assert!((f.nodes()[j] - re(10.0)).norm() < 1e-14);
    }

    #[test]
    fn normalize() {
        let f = RationalFilter::new(vec![re(1.0), re(2.0)], vec![re(2.0), re(4.0)]).unwrap();
        let g = f.normalize_at_pole(0).unwrap();
        assert_eq!(g.weights(), &[re(1.0), re(2.0)]);
        assert_eq!(g.normalize_at_pole(0).unwrap(), g);
        assert!(f.normalize_at_pole(5).is_err());
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let f = RationalFilter::circle(re(0.0), 1.0, 4).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.starts_with("{\"nodes\":[["));
        let g: RationalFilter = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
        let bad = r#"{"nodes":[[1,0],[1,0]],"weights":[[1,0],[1,0]]}"#;
        assert!(serde_json::from_str::<RationalFilter>(bad).is_err());
        let zero = r#"{"nodes":[[1,0]],"weights":[[0,0]]}"#;
        assert!(serde_json::from_str::<RationalFilter>(zero).is_err());
    }

    #[test]
    fn apply_on_diagonal() {
        let a = ComplexMatrix::from_diag(&[re(0.0), re(1.0)]);
        let x = apply_filter(&RationalFilter::shift_invert(re(2.0)), &a, &ComplexMatrix::identity(2)).unwrap();
        assert!(x.max_abs_diff(&ComplexMatrix::from_diag(&[re(0.5), re(1.0)])) < 1e-16);
    }

    #[test]
    fn apply_singular_shift_names_node() {
        let a = ComplexMatrix::from_diag(&[re(0.0), re(1.0)]);
        let f = RationalFilter::new(vec![re(3.0), re(1.0)], vec![re(1.0), re(1.0)]).unwrap();
        match apply_filter(&f, &a, &ComplexMatrix::identity(2)) {
            Err(Error::SingularShift { z, .. }) => assert_eq!(z, re(1.0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn profile_of_shift_invert() {
        let spec = SpectrumSpec::new(vec![re(1.0)], vec![re(3.0), re(-4.0)]).unwrap();
        let p = filter_profile(&RationalFilter::shift_invert(re(1.5)), &spec).unwrap();
        assert!((p.rho - 0.5 / 1.5).abs() < 1e-15);
        let bad = filter_profile(&RationalFilter::shift_invert(re(2.9)), &spec);
        assert!(matches!(bad, Err(Error::SeparationFailure { .. })));
    }
}
