//! Test matrices with prescribed spectra and eigenvector conditioning.

use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, ComplexMatrix, C64};
use crate::linalg::random::{haar, rng};
use crate::linalg::{condition_number, LuFactorization, UNIT_ROUNDOFF};

/// Largest eigenvector condition number `make_nonnormal` accepts.
pub const MAX_KAPPA_V: f64 = 1e8;

/// A target eigenvalue placed at `pole - d e^{i theta}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DangerRecord {
    /// Position in `SpectrumSpec::target`.
    pub index: usize,
    pub pole: C64,
    pub d: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSpec {
    #[serde(deserialize_with = "de_values")]
    pub target: Vec<C64>,
    #[serde(deserialize_with = "de_values")]
    pub unwanted: Vec<C64>,
    #[serde(
        default,
        skip_serializing_if = "Vec::is_empty",
        serialize_with = "ser_danger",
        deserialize_with = "de_danger"
    )]
    pub danger: Vec<DangerRecord>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Value {
    Real(f64),
    Complex([f64; 2]),
}

fn de_values<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<C64>, D::Error> {
    let raw = Vec::<Value>::deserialize(d)?;
    Ok(raw
        .into_iter()
        .map(|v| match v {
            Value::Real(x) => C64::new(x, 0.0),
            Value::Complex([x, y]) => C64::new(x, y),
        })
        .collect())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(DangerRecord),
    Many(Vec<DangerRecord>),
}

fn de_danger<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<DangerRecord>, D::Error> {
    Ok(match Option::<OneOrMany>::deserialize(d)? {
        None => Vec::new(),
        Some(OneOrMany::One(r)) => vec![r],
        Some(OneOrMany::Many(v)) => v,
    })
}

fn ser_danger<S: Serializer>(v: &[DangerRecord], s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.len() == 1 {
        v[0].serialize(s)
    } else {
        v.serialize(s)
    }
}

impl SpectrumSpec {
    pub fn new(target: Vec<C64>, unwanted: Vec<C64>) -> Result<Self> {
        let s = Self {
            target,
            unwanted,
            danger: Vec::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn m(&self) -> usize {
        self.target.len()
    }

    pub fn n(&self) -> usize {
        self.target.len() + self.unwanted.len()
    }

    /// Targets followed by unwanted eigenvalues; the column order of `TestMatrix::v`.
    pub fn eigenvalues(&self) -> Vec<C64> {
        self.target.iter().chain(&self.unwanted).copied().collect()
    }

    pub fn is_real(&self) -> bool {
        self.eigenvalues().iter().all(|z| z.im == 0.0)
    }

    /// Largest absolute eigenvalue.
    pub fn max_abs(&self) -> f64 {
        self.eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target.is_empty() {
            return Err(Error::InvalidSpectrum("target set is empty".into()));
        }
        if self.eigenvalues().iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidSpectrum("non-finite eigenvalue".into()));
        }
        for t in &self.target {
            if self.unwanted.contains(t) {
                return Err(Error::InvalidSpectrum(format!("{t} is both target and unwanted")));
            }
        }
        for r in &self.danger {
            let lam = *self
                .target
                .get(r.index)
                .ok_or_else(|| Error::InvalidSpectrum(format!("danger index {} out of range", r.index)))?;
            if !(r.d > 0.0) {
                return Err(Error::InvalidSpectrum(format!("danger distance must be positive, got {}", r.d)));
            }
            let want = C64::from_polar(r.d, r.theta);
            let got = r.pole - lam;
            let slack = 1e-12 * r.d + 4.0 * UNIT_ROUNDOFF * r.pole.norm();
            if (got - want).norm() > slack {
                return Err(Error::InvalidSpectrum(format!(
                    "target {} is at {}, not at pole - d e^(i theta) = {}",
                    r.index,
                    lam,
                    r.pole - want
                )));
            }
        }
        Ok(())
    }

    /// Danger record for target `i`, if any.
    pub fn danger_for(&self, i: usize) -> Option<&DangerRecord> {
        self.danger.iter().find(|r| r.index == i)
    }

    /// Smallest danger distance, if any danger record exists.
    pub fn min_danger_distance(&self) -> Option<f64> {
        self.danger.iter().map(|r| r.d).reduce(f64::min)
    }
}

/// Moves target `index` (or inserts a new leading target when `None`) to
/// `pole - d e^{i theta}` and records it as dangerous.
///
/// The stored `d` and `theta` are those of the rounded eigenvalue, so the
/// record is exact in floating point.
pub fn place_danger(spec: &SpectrumSpec, pole: C64, d: f64, theta: f64, index: Option<usize>) -> Result<SpectrumSpec> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::InvalidSpectrum(format!("danger distance must be positive, got {d}")));
    }
    let lam = pole - C64::from_polar(d, theta);
    let mut out = spec.clone();
    let idx = match index {
        Some(i) if i < out.target.len() => {
            out.target[i] = lam;
            i
        }
        Some(i) => return Err(Error::InvalidSpectrum(format!("target index {i} out of range"))),
        None => {
            out.target.insert(0, lam);
            for r in &mut out.danger {
                r.index += 1;
            }
            0
        }
    };
    out.danger.retain(|r| r.index != idx);
    let shared: Vec<usize> = out
        .danger
        .iter()
        .filter(|r| r.pole == pole)
        .map(|r| r.index)
        .collect();
    for (j, &other) in out.target.iter().enumerate() {
        if j == idx || shared.contains(&j) {
            continue;
        }
        if (other - lam).norm() < 1e-3 * d {
            return Err(Error::InvalidSpectrum(format!(
                "dangerous eigenvalue {lam} collides with target {j} = {other}"
            )));
        }
    }
    if let Some(other) = out.unwanted.iter().find(|&&o| (o - lam).norm() < 1e-3 * d) {
        return Err(Error::InvalidSpectrum(format!(
            "dangerous eigenvalue {lam} collides with unwanted {other}"
        )));
    }
    let gap = pole - lam;
    out.danger.push(DangerRecord {
        index: idx,
        pole,
        d: gap.norm(),
        theta: gap.arg().rem_euclid(2.0 * std::f64::consts::PI),
    });
    out.danger.sort_by_key(|r| r.index);
    out.validate()?;
    Ok(out)
}

/// `count` values drawn uniformly from `[lo, hi]`, sorted ascending.
pub fn uniform_cluster(count: usize, lo: f64, hi: f64, seed: u64) -> Vec<C64> {
    let mut r = rng(seed);
    let dist = Uniform::new_inclusive(lo, hi).expect("lo <= hi");
    let mut v: Vec<f64> = (0..count).map(|_| dist.sample(&mut r)).collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().map(|x| C64::new(x, 0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Normal,
    Diagonalizable,
}

#[derive(Debug, Clone)]
pub struct TestMatrix {
    pub a: ComplexMatrix,
    /// Right eigenvectors, unit columns, ordered as `spectrum.eigenvalues()`.
    pub v: ComplexMatrix,
    /// Left eigenvectors, unit columns.
    pub w: ComplexMatrix,
    /// `w_i^* v_i` for the unit vectors above.
    pub w_dot_v: Vec<C64>,
    pub spectrum: SpectrumSpec,
    pub kind: MatrixKind,
}

impl TestMatrix {
    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.spectrum.m()
    }

    /// `V_1`: right eigenvectors of the targets.
    pub fn v1(&self) -> ComplexMatrix {
        self.v.columns_range(0, self.m())
    }

    pub fn w1(&self) -> ComplexMatrix {
        self.w.columns_range(0, self.m())
    }

    /// Left vectors scaled so that `W^* V = I`.
    pub fn w_biorthogonal(&self) -> ComplexMatrix {
        let s: Vec<C64> = self.w_dot_v.iter().map(|x| (C64::new(1.0, 0.0) / x).conj()).collect();
        self.w.scale_columns(&s)
    }

    /// Wilkinson condition numbers `1 / |w_i^* v_i|`.
    pub fn wilkinson(&self) -> Vec<f64> {
        self.w_dot_v.iter().map(|x| 1.0 / x.norm()).collect()
    }

    /// `||A v_i - lambda_i v_i||` for every eigenpair.
    pub fn residuals(&self) -> Vec<f64> {
        crate::linalg::eig::pair_residuals(&self.a, &self.spectrum.eigenvalues(), &self.v)
    }

    /// Entries as CSV rows `row,col,re,im`.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["row", "col", "re", "im"])?;
        for j in 0..self.a.cols() {
            for i in 0..self.a.rows() {
                let z = self.a[(i, j)];
                w.write_record(&[i.to_string(), j.to_string(), format!("{:e}", z.re), format!("{:e}", z.im)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `A = Q diag(lambda) Q^*` with `Q` Haar. Real spectra give a real
/// symmetric `A` (real orthogonal `Q`, exactly symmetrized).
pub fn make_normal(spec: &SpectrumSpec, seed: u64) -> Result<TestMatrix> {
    spec.validate()?;
    let real = spec.is_real();
    let lam = spec.eigenvalues();
    let q = haar(spec.n(), seed, !real);
    let a = q.scale_columns(&lam).matmul(&q.adjoint());
    let a = if real { a.hermitian_part() } else { a };
    let w_dot_v = vec![C64::new(1.0, 0.0); spec.n()];
    Ok(TestMatrix {
        a,
        v: q.clone(),
        w: q,
        w_dot_v,
        spectrum: spec.clone(),
        kind: MatrixKind::Normal,
    })
}

/// `A = V diag(lambda) V^{-1}` with `V = U_1 diag(ramp) U_2`, columns
/// normalized, and the geometric ramp tuned until `kappa(V)` is within 10%
/// of `kappa_v`.
pub fn make_nonnormal(spec: &SpectrumSpec, kappa_v: f64, seed: u64) -> Result<TestMatrix> {
    spec.validate()?;
    if !(kappa_v >= 1.0) {
        return Err(Error::InvalidSpectrum(format!("kappa_v must be >= 1, got {kappa_v}")));
    }
    if kappa_v > MAX_KAPPA_V {
        return Err(Error::KappaRefused(kappa_v));
    }
    let n = spec.n();
    let real = spec.is_real();
    let u1 = haar(n, seed, !real);
    let u2 = haar(n, seed.wrapping_add(0x9e37_79b9_7f4a_7c15), !real);
    let build = |log_k: f64| -> Result<(ComplexMatrix, f64)> {
        let ramp: Vec<C64> = (0..n)
            .map(|i| {
                let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                C64::new((-log_k * t).exp(), 0.0)
            })
            .collect();
        let v = u1.scale_columns(&ramp).matmul(&u2).normalize_columns();
        let k = condition_number(&v)?;
        Ok((v, k))
    };
    let target = kappa_v.ln();
    let (mut v, mut k) = build(target)?;
    // Secant iteration on log kappa(V) as a function of the ramp exponent.
    let mut x0 = target;
    let mut f0 = k.ln() - target;
    let mut x1 = if f0.abs() > 0.0 { target - f0 } else { target };
    for _ in 0..20 {
        if (k / kappa_v - 1.0).abs() <= 0.02 || kappa_v == 1.0 {
            break;
        }
        let (v1, k1) = build(x1.max(0.0))?;
        let f1 = k1.ln() - target;
        v = v1;
        k = k1;
        if (f1 - f0).abs() < 1e-14 {
            break;
        }
        let x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
        x0 = x1;
        f0 = f1;
        x1 = x2;
    }
    if (k / kappa_v - 1.0).abs() > 0.1 {
        return Err(Error::ConvergenceFailure {
            routine: "eigenvector conditioning ramp",
            iterations: 20,
        });
    }
    let vinv = LuFactorization::new(&v)?.solve(&ComplexMatrix::identity(n))?;
    let lam = spec.eigenvalues();
    let a = v.scale_columns(&lam).matmul(&vinv);
    let a = if real { a.map(|z| C64::new(z.re, 0.0)) } else { a };
    // Rows of V^{-1} are the left eigenvectors (conjugated).
    let w_raw = vinv.adjoint();
    let w = w_raw.normalize_columns();
    let w_dot_v = (0..n).map(|i| dot(w.col(i), v.col(i))).collect();
    Ok(TestMatrix {
        a,
        v,
        w,
        w_dot_v,
        spectrum: spec.clone(),
        kind: MatrixKind::Diagonalizable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eig_dense;
    use crate::linalg::matrix::re;

    fn reals(v: &[f64]) -> Vec<C64> {
        v.iter().map(|&x| re(x)).collect()
    }

    #[test]
    fn small_spectrum_roundtrip() {
        let spec = SpectrumSpec::new(reals(&[1.0, 2.0]), reals(&[3.0])).unwrap();
        let t = make_normal(&spec, 5).unwrap();
        let mut ev: Vec<f64> = eig_dense(&t.a).unwrap().eigenvalues.iter().map(|z| z.re).collect();
        ev.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let t2 = make_normal(&spec, 5).unwrap();
        assert_eq!(t.a, t2.a);
    }

    #[test]
    fn danger_placement() {
        let spec = SpectrumSpec::new(reals(&[12.0]), reals(&[1.0])).unwrap();
        let s = place_danger(&spec, re(10.0), 1e-10, 0.0, None).unwrap();
        assert!((s.target[0].re - (10.0 - 1e-10)).abs() < 1e-15);
        let s = place_danger(&spec, re(10.0), 1e-10, std::f64::consts::PI, None).unwrap();
        assert!((s.target[0].re - (10.0 + 1e-10)).abs() < 1e-15);
        assert_eq!(s.danger.len(), 1);
        assert_eq!(s.danger[0].index, 0);
        assert!((s.danger[0].d / 1e-10 - 1.0).abs() < 1e-4);
        // Second dangerous eigenvalue at the same spot.
        let s2 = place_danger(&s, re(10.0), 1e-10, std::f64::consts::PI, None).unwrap();
        assert_eq!(s2.danger.len(), 2);
        assert_eq!(s2.target[0], s2.target[1]);
        // Collision with an ordinary eigenvalue.
        let spec = SpectrumSpec::new(reals(&[10.0 + 1e-10]), reals(&[1.0])).unwrap();
        assert!(place_danger(&spec, re(10.0), 1e-10, std::f64::consts::PI, None).is_err());
    }

    #[test]
    fn json_forms() {
        let one = r#"{"target":[10.0000000001, [12, 0]],"unwanted":[1,2],
            "danger":{"index":0,"pole":[10,0],"d":1e-10,"theta":3.141592653589793}}"#;
        let s: SpectrumSpec = serde_json::from_str(one).unwrap();
        s.validate().unwrap();
        assert_eq!(s.danger.len(), 1);
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"danger\":{"));
        let many = r#"{"target":[1,2],"unwanted":[3],"danger":[]}"#;
        let s: SpectrumSpec = serde_json::from_str(many).unwrap();
        assert!(s.danger.is_empty());
    }

    #[test]
    fn nonnormal_conditioning() {
        let spec = SpectrumSpec::new(reals(&[10.0, 11.0, 12.0]), uniform_cluster(37, 0.0, 5.0, 1)).unwrap();
        let t = make_nonnormal(&spec, 100.0, 3).unwrap();
        let k = condition_number(&t.v).unwrap();
        assert!((90.0..=110.0).contains(&k), "kappa {k}");
        let wv = t.w_biorthogonal().adjoint_mul(&t.v);
        assert!(wv.sub(&ComplexMatrix::identity(40)).max_abs() < 1e-10);
        assert!(t.wilkinson().iter().all(|&x| x >= 1.0 - 1e-12 && x.is_finite()));
        let anorm = crate::linalg::spectral_norm(&t.a).unwrap();
        assert!(t.residuals().iter().all(|&r| r <= 1e-12 * anorm));
        assert!(matches!(make_nonnormal(&spec, 1e9, 3), Err(Error::KappaRefused(_))));
    }

    #[test]
    fn unit_kappa_is_normal() {
        let spec = SpectrumSpec::new(reals(&[4.0, 5.0]), reals(&[0.0, 1.0, 2.0])).unwrap();
        let t = make_nonnormal(&spec, 1.0, 8).unwrap();
        assert!(t.v.adjoint_mul(&t.v).sub(&ComplexMatrix::identity(5)).max_abs() < 1e-12);
    }
}
