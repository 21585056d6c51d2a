//! Meat matrices and sandwich variance estimators: EHW, one-way
//! Liang–Zeger, CGM and CGM2.
//!
//! All meats are normalized by the sample size N, so a sandwich
//! `V = L̂⁻¹ · meat · L̂⁻¹` is the variance of `√N(θ̂ − θ*)` and standard
//! errors are `sqrt(diag(V) / N)`. No small-sample multipliers are applied
//! unless requested through [`stata_factor`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::data::{ClusterIndex, Dim};
use crate::linalg::{group_sums, sandwich_product, symmetrize};
use crate::{Error, Result};

/// What a meat matrix measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeatKind {
    Ehw,
    ClusterG,
    ClusterH,
    Intersection,
    ShrinkZ,
    ShrinkZCE,
    ShrinkZGE,
    ShrinkZHE,
}

/// A symmetric k × k meat component.
#[derive(Debug, Clone)]
pub struct MeatMatrix {
    pub value: DMatrix<f64>,
    pub kind: MeatKind,
    /// Divisor applied to the raw sum (N, or M for the full-population
    /// two-way projections).
    pub divisor: f64,
}

/// Variance estimator families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Ehw,
    /// One-way Liang–Zeger on the given dimension.
    Lz(Dim),
    Cgm,
    Cgm2,
    /// One-way shrinkage-adjusted estimator (cases 1–4) on a dimension.
    AdjOneWay { dim: Dim, case: u8 },
    /// Two-way shrinkage-adjusted estimator (cases 1–2).
    AdjTwoWay { case: u8 },
    /// CGM inclusion–exclusion meat with the two-way projection adjustment.
    AdjCgm,
}

impl Family {
    /// Short label used in tables and on the command line.
    pub fn label(&self) -> String {
        match self {
            Family::Ehw => "ehw".into(),
            Family::Lz(d) => format!("lz-{}", dim_tag(*d)),
            Family::Cgm => "cgm".into(),
            Family::Cgm2 => "cgm2".into(),
            Family::AdjOneWay { dim, case: 2 } => format!("adj-oneway-{}", dim_tag(*dim)),
            Family::AdjOneWay { dim, case } => format!("adj-oneway-{}-case{case}", dim_tag(*dim)),
            Family::AdjTwoWay { case: 2 } => "adj-cgm2".into(),
            Family::AdjTwoWay { case } => format!("adj-twoway-case{case}"),
            Family::AdjCgm => "adj-cgm".into(),
        }
    }

    /// Parses a label produced by [`Family::label`]; `case` overrides the
    /// default case for adjusted families.
    pub fn parse(label: &str, case: Option<u8>) -> Result<Self> {
        let bad = || Error::Input(format!("unknown variance family '{label}'"));
        let dim = |s: &str| match s {
            "g" => Ok(Dim::G),
            "h" => Ok(Dim::H),
            _ => Err(bad()),
        };
        let family = match label {
            "ehw" => Family::Ehw,
            "lz" | "lz-g" => Family::Lz(Dim::G),
            "lz-h" => Family::Lz(Dim::H),
            "cgm" => Family::Cgm,
            "cgm2" => Family::Cgm2,
            "adj-cgm" => Family::AdjCgm,
            "adj-cgm2" => Family::AdjTwoWay { case: case.unwrap_or(2) },
            "adj-twoway" => Family::AdjTwoWay { case: case.unwrap_or(2) },
            "adj-oneway" => Family::AdjOneWay { dim: Dim::G, case: case.unwrap_or(2) },
            other => {
                if let Some(rest) = other.strip_prefix("adj-oneway-") {
                    let (d, c) = match rest.split_once("-case") {
                        Some((d, c)) => (d, Some(c.parse::<u8>().map_err(|_| bad())?)),
                        None => (rest, None),
                    };
                    Family::AdjOneWay {
                        dim: dim(d)?,
                        case: case.or(c).unwrap_or(2),
                    }
                } else if let Some(c) = other.strip_prefix("adj-twoway-case") {
                    Family::AdjTwoWay {
                        case: c.parse().map_err(|_| bad())?,
                    }
                } else {
                    return Err(bad());
                }
            }
        };
        match family {
            Family::AdjOneWay { case, .. } if !(1..=4).contains(&case) => {
                Err(Error::Input(format!("one-way adjustment case must be 1-4, got {case}")))
            }
            Family::AdjTwoWay { case } if !(1..=2).contains(&case) => {
                Err(Error::Input(format!("two-way adjustment case must be 1 or 2, got {case}")))
            }
            f => Ok(f),
        }
    }

    pub fn is_adjusted(&self) -> bool {
        matches!(
            self,
            Family::AdjOneWay { .. } | Family::AdjTwoWay { .. } | Family::AdjCgm
        )
    }

    pub fn is_two_way(&self) -> bool {
        matches!(
            self,
            Family::Cgm | Family::Cgm2 | Family::AdjTwoWay { .. } | Family::AdjCgm
        )
    }

    /// Degrees of freedom for t critical values: G_N − 1 for EHW and the
    /// G dimension, H_N − 1 for the H dimension, min(G_N, H_N) − 1 for the
    /// two-way families. A single cluster falls back to normal quantiles.
    pub fn dof(&self, clusters: &ClusterIndex) -> f64 {
        let count = match self {
            Family::Ehw => clusters.count(Dim::G),
            Family::Lz(d) | Family::AdjOneWay { dim: d, .. } => clusters.count(*d),
            _ => clusters.count(Dim::G).min(clusters.count(Dim::H)),
        };
        if count <= 1 {
            f64::INFINITY
        } else {
            (count - 1) as f64
        }
    }
}

fn dim_tag(d: Dim) -> &'static str {
    match d {
        Dim::G => "g",
        Dim::H => "h",
        Dim::Intersection => "gh",
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// Sandwich variance with standard errors.
#[derive(Debug, Clone)]
pub struct VarianceReport {
    /// Variance of √N(θ̂ − θ*).
    pub v: DMatrix<f64>,
    pub se: DVector<f64>,
    pub family: Family,
    pub dof: f64,
    pub n: usize,
    /// Coefficients whose variance diagonal is not positive; their se is
    /// NaN when the diagonal is negative.
    pub nonpositive: Vec<usize>,
    pub notes: Vec<String>,
}

impl VarianceReport {
    pub fn has_negative_variance(&self) -> bool {
        self.nonpositive.iter().any(|&j| self.v[(j, j)] < 0.0)
    }
}

/// `(1/N) Σ m_i m_i'`.
pub fn meat_ehw(scores: &DMatrix<f64>) -> MeatMatrix {
    let n = scores.nrows() as f64;
    MeatMatrix {
        value: symmetrize(&(scores.transpose() * scores)) / n,
        kind: MeatKind::Ehw,
        divisor: n,
    }
}

/// Within-cluster cross products over pairs i ≠ j, divided by N:
/// `(Σ_c s̃_c s̃_c' − Σ_i m_i m_i') / N`.
pub fn meat_cluster(scores: &DMatrix<f64>, clusters: &ClusterIndex, dim: Dim) -> MeatMatrix {
    let n = scores.nrows() as f64;
    let sums = group_sums(scores, clusters.labels(dim), clusters.count(dim));
    let value = symmetrize(&(sums.transpose() * &sums - scores.transpose() * scores)) / n;
    let kind = match dim {
        Dim::G => MeatKind::ClusterG,
        Dim::H => MeatKind::ClusterH,
        Dim::Intersection => MeatKind::Intersection,
    };
    MeatMatrix {
        value,
        kind,
        divisor: n,
    }
}

/// Standard errors from a variance of √N(θ̂ − θ*).
fn standard_errors(v: &DMatrix<f64>, n: usize) -> (DVector<f64>, Vec<usize>) {
    let k = v.nrows();
    let mut se = DVector::zeros(k);
    let mut nonpositive = Vec::new();
    for j in 0..k {
        let d = v[(j, j)];
        if d > 0.0 {
            se[j] = (d / n as f64).sqrt();
        } else {
            nonpositive.push(j);
            se[j] = if d < 0.0 { f64::NAN } else { 0.0 };
        }
    }
    (se, nonpositive)
}

/// `L̂⁻¹ · meat · L̂⁻¹` with standard errors for a sample of size `n`.
pub fn sandwich(
    meat: &DMatrix<f64>,
    hessian_avg: &DMatrix<f64>,
    n: usize,
    family: Family,
    dof: f64,
) -> Result<VarianceReport> {
    let v = sandwich_product(hessian_avg, meat)?;
    let (se, nonpositive) = standard_errors(&v, n);
    let mut notes = Vec::new();
    if nonpositive.iter().any(|&j| v[(j, j)] < 0.0) {
        notes.push(format!("negative variance estimate for coefficients {nonpositive:?}"));
    }
    Ok(VarianceReport {
        v,
        se,
        family,
        dof,
        n,
        nonpositive,
        notes,
    })
}

/// Heteroskedasticity-robust (EHW) sandwich.
pub fn v_ehw(scores: &DMatrix<f64>, hessian_avg: &DMatrix<f64>, clusters: &ClusterIndex) -> Result<VarianceReport> {
    let meat = meat_ehw(scores).value;
    sandwich(&meat, hessian_avg, scores.nrows(), Family::Ehw, Family::Ehw.dof(clusters))
}

/// One-way cluster-robust (Liang–Zeger) sandwich on `dim`.
pub fn v_lz_oneway(
    scores: &DMatrix<f64>,
    hessian_avg: &DMatrix<f64>,
    clusters: &ClusterIndex,
    dim: Dim,
) -> Result<VarianceReport> {
    let meat = meat_ehw(scores).value + meat_cluster(scores, clusters, dim).value;
    let family = Family::Lz(dim);
    sandwich(&meat, hessian_avg, scores.nrows(), family, family.dof(clusters))
}

/// Cameron–Gelbach–Miller two-way sandwich `EHW + G + H − (G∩H)`.
pub fn v_cgm(scores: &DMatrix<f64>, hessian_avg: &DMatrix<f64>, clusters: &ClusterIndex) -> Result<VarianceReport> {
    let meat = meat_ehw(scores).value
        + meat_cluster(scores, clusters, Dim::G).value
        + meat_cluster(scores, clusters, Dim::H).value
        - meat_cluster(scores, clusters, Dim::Intersection).value;
    sandwich(&meat, hessian_avg, scores.nrows(), Family::Cgm, Family::Cgm.dof(clusters))
}

/// Conservative two-way sandwich `2·EHW + G + H`.
pub fn v_cgm2(scores: &DMatrix<f64>, hessian_avg: &DMatrix<f64>, clusters: &ClusterIndex) -> Result<VarianceReport> {
    let meat = meat_ehw(scores).value * 2.0
        + meat_cluster(scores, clusters, Dim::G).value
        + meat_cluster(scores, clusters, Dim::H).value;
    sandwich(&meat, hessian_avg, scores.nrows(), Family::Cgm2, Family::Cgm2.dof(clusters))
}

/// Stata-style multiplier `c/(c−1) · (N−1)/(N−k)` with `c` the number of
/// clusters behind the family's degrees of freedom.
pub fn stata_factor(report: &VarianceReport, k: usize) -> f64 {
    let n = report.n as f64;
    let small = if report.dof.is_finite() {
        let c = report.dof + 1.0;
        c / (c - 1.0)
    } else {
        1.0
    };
    small * (n - 1.0) / (n - k as f64)
}

/// Applies a variance multiplier to a report.
pub fn scale_report(report: &VarianceReport, factor: f64) -> VarianceReport {
    let mut out = report.clone();
    out.v *= factor;
    let (se, nonpositive) = standard_errors(&out.v, out.n);
    out.se = se;
    out.nonpositive = nonpositive;
    out
}

/// Student-t quantile at `level`; infinite `dof` gives the normal quantile.
pub fn critical_value(dof: f64, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Input(format!("quantile level must lie in (0, 1), got {level}")));
    }
    if dof.is_infinite() && dof > 0.0 {
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        return Ok(normal.inverse_cdf(level));
    }
    if !(dof >= 1.0) {
        return Err(Error::Input(format!("degrees of freedom must be at least 1, got {dof}")));
    }
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Input(e.to_string()))?;
    Ok(t.inverse_cdf(level))
}
