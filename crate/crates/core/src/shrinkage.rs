//! Covariate-projection adjustments for finite-population cluster variances.
//!
//! Each adjustment meat is the second moment of the fitted values from a
//! least-squares projection of (unit or cluster-summed) scores onto fixed
//! attributes. Subtracting it, scaled by the estimated sampling fraction
//! N/M, removes the part of the design-based correction that the attributes
//! can predict.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;

use crate::data::{ClusterIndex, Dim, PopulationMeta};
use crate::linalg::{group_sums, symmetrize, Basis};
use crate::variance::{meat_cluster, meat_ehw, sandwich, Family, MeatKind, MeatMatrix, VarianceReport};
use crate::{Error, Result};

/// Options controlling the attribute projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShrinkOptions {
    /// Prepend an all-ones column to the attributes.
    pub intercept: bool,
    /// Fail on collinear attribute columns instead of dropping them.
    pub strict: bool,
    /// Divide the two-way projection meats by N/M, for two-way assignment
    /// combined with sampling.
    pub sampled_two_way: bool,
}

impl Default for ShrinkOptions {
    fn default() -> Self {
        ShrinkOptions {
            intercept: true,
            strict: false,
            sampled_two_way: false,
        }
    }
}

/// Everything the adjusted estimators need besides the Hessian.
#[derive(Debug, Clone)]
pub struct AdjustmentInputs {
    pub scores: DMatrix<f64>,
    /// Attribute matrix, including the intercept column when requested.
    pub z_attr: DMatrix<f64>,
    pub z_names: Vec<String>,
    pub clusters: ClusterIndex,
    pub meta: PopulationMeta,
    pub options: ShrinkOptions,
}

impl AdjustmentInputs {
    pub fn new(
        scores: DMatrix<f64>,
        z_attr: &DMatrix<f64>,
        z_names: &[String],
        clusters: &ClusterIndex,
        meta: PopulationMeta,
        options: ShrinkOptions,
    ) -> Result<Self> {
        let n = scores.nrows();
        if z_attr.nrows() != n || clusters.len() != n {
            return Err(Error::Input(format!(
                "adjustment inputs disagree on rows: scores {n}, attributes {}, clusters {}",
                z_attr.nrows(),
                clusters.len()
            )));
        }
        if z_names.len() != z_attr.ncols() {
            return Err(Error::Input("attribute names do not match attribute columns".into()));
        }
        let (z, names) = if options.intercept {
            let mut z = DMatrix::from_element(n, z_attr.ncols() + 1, 1.0);
            z.view_mut((0, 1), (n, z_attr.ncols())).copy_from(z_attr);
            let mut names = vec!["(intercept)".to_string()];
            names.extend(z_names.iter().cloned());
            (z, names)
        } else {
            (z_attr.clone(), z_names.to_vec())
        };
        Ok(AdjustmentInputs {
            scores,
            z_attr: z,
            z_names: names,
            clusters: clusters.clone(),
            meta,
            options,
        })
    }

    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    fn population_size(&self, family: Family) -> Result<f64> {
        self.meta
            .population_size
            .map(|m| m as f64)
            .ok_or(Error::MetadataRequired {
                what: "population size M",
                family: family.label(),
            })
    }

    fn total(&self, dim: Dim, family: Family) -> Result<f64> {
        let (value, what) = match dim {
            Dim::H => (self.meta.total_h, "total number of H clusters"),
            _ => (self.meta.total_g, "total number of G clusters"),
        };
        value.map(|v| v as f64).ok_or(Error::MetadataRequired {
            what,
            family: family.label(),
        })
    }
}

/// Shrinkage-adjusted variance with the meats that entered it.
#[derive(Debug, Clone)]
pub struct AdjustedVariance {
    pub report: VarianceReport,
    pub case: u8,
    pub components: BTreeMap<String, MeatMatrix>,
}

/// Fitted values of every column of `target` projected on `attr`.
fn fitted_values(attr: &DMatrix<f64>, names: &[String], target: &DMatrix<f64>, strict: bool) -> Result<(DMatrix<f64>, Vec<String>)> {
    let basis = Basis::new(attr);
    let dropped: Vec<String> = basis.dropped.iter().map(|&j| names[j].clone()).collect();
    if !dropped.is_empty() {
        if strict {
            return Err(Error::SingularAttributes { columns: dropped });
        }
        warn!("dropping collinear attribute columns {dropped:?}");
    }
    Ok((basis.project(target), dropped))
}

fn second_moment(fitted: &DMatrix<f64>, divisor: f64, kind: MeatKind) -> MeatMatrix {
    MeatMatrix {
        value: symmetrize(&(fitted.transpose() * fitted)) / divisor,
        kind,
        divisor,
    }
}

/// Unit-level projection meat `(1/N) M̂'M̂`, with `M̂` the projection of the
/// scores onto the attributes.
pub fn delta_z(inputs: &AdjustmentInputs) -> Result<MeatMatrix> {
    let (fitted, _) = fitted_values(&inputs.z_attr, &inputs.z_names, &inputs.scores, inputs.options.strict)?;
    Ok(second_moment(&fitted, inputs.n() as f64, MeatKind::ShrinkZ))
}

fn cluster_projection(inputs: &AdjustmentInputs, dim: Dim) -> Result<DMatrix<f64>> {
    let labels = inputs.clusters.labels(dim);
    let count = inputs.clusters.count(dim);
    if inputs.z_attr.ncols() > count {
        warn!(
            "{} attribute columns exceed the {count} clusters on {dim}; the projection is saturated",
            inputs.z_attr.ncols()
        );
    }
    let z_sum = group_sums(&inputs.z_attr, labels, count);
    let m_sum = group_sums(&inputs.scores, labels, count);
    let (fitted, _) = fitted_values(&z_sum, &inputs.z_names, &m_sum, inputs.options.strict)?;
    Ok(fitted)
}

/// Cluster-sum projection meat on `dim`, divided by N.
pub fn delta_z_ce(inputs: &AdjustmentInputs, dim: Dim) -> Result<MeatMatrix> {
    let fitted = cluster_projection(inputs, dim)?;
    Ok(second_moment(&fitted, inputs.n() as f64, MeatKind::ShrinkZCE))
}

/// Cluster-sum projection meat on G or H, divided by the population size M.
pub fn delta_z_dim(inputs: &AdjustmentInputs, dim: Dim, population_size: f64) -> Result<MeatMatrix> {
    let fitted = cluster_projection(inputs, dim)?;
    let kind = if dim == Dim::H { MeatKind::ShrinkZHE } else { MeatKind::ShrinkZGE };
    Ok(second_moment(&fitted, population_size, kind))
}

fn finish(
    family: Family,
    case: u8,
    meat: DMatrix<f64>,
    hessian_avg: &DMatrix<f64>,
    inputs: &AdjustmentInputs,
    components: Vec<(&str, MeatMatrix)>,
    notes: Vec<String>,
) -> Result<AdjustedVariance> {
    let mut report = sandwich(&meat, hessian_avg, inputs.n(), family, family.dof(&inputs.clusters))?;
    report.notes.extend(notes);
    let dims: &[Dim] = match family {
        Family::AdjOneWay { dim, .. } => &[dim],
        _ => &[Dim::G, Dim::H],
    };
    for &dim in dims {
        let count = inputs.clusters.count(dim);
        if inputs.z_attr.ncols() > count {
            report.notes.push(format!(
                "{} attribute columns exceed the {count} sampled {dim} clusters",
                inputs.z_attr.ncols()
            ));
        }
    }
    Ok(AdjustedVariance {
        report,
        case,
        components: components.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    })
}

/// One-way adjusted estimator on `dim` for the one-way table cases:
///
/// 1. cluster sampling only: `EHW + (1 − G_N/G)·cluster − (N/M)·Δ^Z`
/// 2. cluster assignment only: `EHW + cluster − (N/M)·Δ^Z_CE`
/// 3. both: as case 2
/// 4. neither: `EHW − (N/M)·Δ^Z`
pub fn adjusted_oneway(inputs: &AdjustmentInputs, dim: Dim, case: u8, hessian_avg: &DMatrix<f64>) -> Result<AdjustedVariance> {
    let family = Family::AdjOneWay { dim, case };
    let m = inputs.population_size(family)?;
    let ratio = inputs.n() as f64 / m;
    let ehw = meat_ehw(&inputs.scores);
    let mut notes = Vec::new();
    let (meat, components) = match case {
        1 => {
            let total = inputs.total(dim, family)?;
            let sampled = inputs.clusters.count(dim) as f64 / total;
            let cluster = meat_cluster(&inputs.scores, &inputs.clusters, dim);
            let dz = delta_z(inputs)?;
            let meat = &ehw.value + &cluster.value * (1.0 - sampled) - &dz.value * ratio;
            (meat, vec![("ehw", ehw), ("cluster", cluster), ("shrink_z", dz)])
        }
        2 | 3 => {
            if case == 3 {
                notes.push("cluster-sum projection applied under cluster sampling".to_string());
            }
            let cluster = meat_cluster(&inputs.scores, &inputs.clusters, dim);
            let dz = delta_z_ce(inputs, dim)?;
            let meat = &ehw.value + &cluster.value - &dz.value * ratio;
            (meat, vec![("ehw", ehw), ("cluster", cluster), ("shrink_z_ce", dz)])
        }
        4 => {
            let dz = delta_z(inputs)?;
            let meat = &ehw.value - &dz.value * ratio;
            (meat, vec![("ehw", ehw), ("shrink_z", dz)])
        }
        _ => return Err(Error::Input(format!("one-way adjustment case must be 1-4, got {case}"))),
    };
    finish(family, case, meat, hessian_avg, inputs, components, notes)
}

fn two_way_projections(inputs: &AdjustmentInputs, m: f64) -> Result<(MeatMatrix, MeatMatrix, f64)> {
    let ratio = inputs.n() as f64 / m;
    let zg = delta_z_dim(inputs, Dim::G, m)?;
    let zh = delta_z_dim(inputs, Dim::H, m)?;
    // Under sampling the projection meats are rescaled by 1/(N/M), which
    // cancels the N/M factor in front of them.
    let factor = if inputs.options.sampled_two_way { 1.0 } else { ratio };
    Ok((zg, zh, factor))
}

/// Two-way adjusted estimator:
///
/// 1. sampling on both dimensions:
///    `EHW + (1−G_N/G)(Ĝ−Î) + (1−H_N/H)(Ĥ−Î) + (1−G_N/G·H_N/H)Î − (N/M)Δ^Z`
/// 2. assignment on both dimensions: `2·EHW + Ĝ + Ĥ − (N/M)(Δ^Z_GE + Δ^Z_HE)`
pub fn adjusted_twoway(inputs: &AdjustmentInputs, case: u8, hessian_avg: &DMatrix<f64>) -> Result<AdjustedVariance> {
    let family = Family::AdjTwoWay { case };
    let m = inputs.population_size(family)?;
    let ehw = meat_ehw(&inputs.scores);
    let g = meat_cluster(&inputs.scores, &inputs.clusters, Dim::G);
    let h = meat_cluster(&inputs.scores, &inputs.clusters, Dim::H);
    match case {
        1 => {
            let gn = inputs.clusters.count(Dim::G) as f64 / inputs.total(Dim::G, family)?;
            let hn = inputs.clusters.count(Dim::H) as f64 / inputs.total(Dim::H, family)?;
            let i = meat_cluster(&inputs.scores, &inputs.clusters, Dim::Intersection);
            let dz = delta_z(inputs)?;
            let ratio = inputs.n() as f64 / m;
            let meat = &ehw.value
                + (&g.value - &i.value) * (1.0 - gn)
                + (&h.value - &i.value) * (1.0 - hn)
                + &i.value * (1.0 - gn * hn)
                - &dz.value * ratio;
            let components = vec![("ehw", ehw), ("cluster_g", g), ("cluster_h", h), ("intersection", i), ("shrink_z", dz)];
            finish(family, case, meat, hessian_avg, inputs, components, Vec::new())
        }
        2 => {
            let (zg, zh, factor) = two_way_projections(inputs, m)?;
            let meat = &ehw.value * 2.0 + &g.value + &h.value - (&zg.value + &zh.value) * factor;
            let components = vec![("ehw", ehw), ("cluster_g", g), ("cluster_h", h), ("shrink_z_ge", zg), ("shrink_z_he", zh)];
            finish(family, case, meat, hessian_avg, inputs, components, Vec::new())
        }
        _ => Err(Error::Input(format!("two-way adjustment case must be 1 or 2, got {case}"))),
    }
}

/// CGM meat with the two-way assignment adjustment:
/// `EHW + Ĝ + Ĥ − Î − (N/M)(Δ^Z_GE + Δ^Z_HE)`.
pub fn adjusted_cgm(inputs: &AdjustmentInputs, hessian_avg: &DMatrix<f64>) -> Result<AdjustedVariance> {
    let family = Family::AdjCgm;
    let m = inputs.population_size(family)?;
    let ehw = meat_ehw(&inputs.scores);
    let g = meat_cluster(&inputs.scores, &inputs.clusters, Dim::G);
    let h = meat_cluster(&inputs.scores, &inputs.clusters, Dim::H);
    let i = meat_cluster(&inputs.scores, &inputs.clusters, Dim::Intersection);
    let (zg, zh, factor) = two_way_projections(inputs, m)?;
    let meat = &ehw.value + &g.value + &h.value - &i.value - (&zg.value + &zh.value) * factor;
    let components = vec![
        ("ehw", ehw),
        ("cluster_g", g),
        ("cluster_h", h),
        ("intersection", i),
        ("shrink_z_ge", zg),
        ("shrink_z_he", zh),
    ];
    finish(family, 2, meat, hessian_avg, inputs, components, Vec::new())
}

/// Adjustment inputs built on APE residuals ψ̂ instead of scores.
pub fn ape_adjusted_inputs(
    psi: &DMatrix<f64>,
    z_attr: &DMatrix<f64>,
    z_names: &[String],
    clusters: &ClusterIndex,
    meta: PopulationMeta,
    options: ShrinkOptions,
) -> Result<AdjustmentInputs> {
    AdjustmentInputs::new(psi.clone(), z_attr, z_names, clusters, meta, options)
}

/// Any variance family from scores and the Hessian average. Adjusted
/// families need `adjust`.
pub fn estimate_family(
    family: Family,
    scores: &DMatrix<f64>,
    hessian_avg: &DMatrix<f64>,
    clusters: &ClusterIndex,
    adjust: Option<&AdjustmentInputs>,
) -> Result<VarianceReport> {
    use crate::variance::{v_cgm, v_cgm2, v_ehw, v_lz_oneway};
    let need = || {
        adjust.ok_or(Error::MetadataRequired {
            what: "attribute matrix and population metadata",
            family: family.label(),
        })
    };
    match family {
        Family::Ehw => v_ehw(scores, hessian_avg, clusters),
        Family::Lz(dim) => v_lz_oneway(scores, hessian_avg, clusters, dim),
        Family::Cgm => v_cgm(scores, hessian_avg, clusters),
        Family::Cgm2 => v_cgm2(scores, hessian_avg, clusters),
        Family::AdjOneWay { dim, case } => Ok(adjusted_oneway(need()?, dim, case, hessian_avg)?.report),
        Family::AdjTwoWay { case } => Ok(adjusted_twoway(need()?, case, hessian_avg)?.report),
        Family::AdjCgm => Ok(adjusted_cgm(need()?, hessian_avg)?.report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(scores: DMatrix<f64>, z: DMatrix<f64>, clusters: &ClusterIndex, intercept: bool) -> AdjustmentInputs {
        let names: Vec<String> = (0..z.ncols()).map(|j| format!("z{j}")).collect();
        let n = scores.nrows();
        AdjustmentInputs::new(
            scores,
            &z,
            &names,
            clusters,
            PopulationMeta::full(n, clusters.count(Dim::G), clusters.count(Dim::H)),
            ShrinkOptions { intercept, ..Default::default() },
        )
        .unwrap()
    }

    #[test]
    fn orthogonal_attributes_give_zero() {
        let s = DMatrix::from_row_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let z = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, -1.0, -1.0]);
        let idx = ClusterIndex::one_way(&[0, 1, 2, 3]);
        let dz = delta_z(&inputs(s, z, &idx, false)).unwrap();
        assert!(dz.value.amax() < 1e-15);
    }

    #[test]
    fn spanning_attributes_recover_ehw() {
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.5, 1.0, -1.0, 2.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let s = &z * b;
        let idx = ClusterIndex::one_way(&[0, 1, 2, 3]);
        let dz = delta_z(&inputs(s.clone(), z, &idx, false)).unwrap();
        assert!((dz.value - meat_ehw(&s).value).amax() < 1e-12);
    }

    #[test]
    fn missing_population_size_is_reported() {
        let s = DMatrix::from_row_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let idx = ClusterIndex::one_way(&[0, 0, 1, 1]);
        let inp = AdjustmentInputs::new(
            s,
            &DMatrix::zeros(4, 0),
            &[],
            &idx,
            PopulationMeta::default(),
            ShrinkOptions::default(),
        )
        .unwrap();
        let err = adjusted_oneway(&inp, Dim::G, 2, &DMatrix::identity(1, 1)).unwrap_err();
        assert!(matches!(err, Error::MetadataRequired { .. }));
    }

    #[test]
    fn strict_mode_names_collinear_attributes() {
        let s = DMatrix::from_row_slice(4, 1, &[1.0, -1.0, 2.0, -1.0]);
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        let idx = ClusterIndex::one_way(&[0, 1, 2, 3]);
        let mut inp = inputs(s, z, &idx, false);
        inp.options.strict = true;
        match delta_z(&inp).unwrap_err() {
            Error::SingularAttributes { columns } => assert_eq!(columns, vec!["z1".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        inp.options.strict = false;
        assert!(delta_z(&inp).is_ok());
    }

    #[test]
    fn case_two_with_zero_adjustment_equals_cgm2() {
        let s = DMatrix::from_row_slice(4, 1, &[1.0, -1.0, -1.0, 1.0]);
        let idx = ClusterIndex::from_ids(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        // Constant attributes with an intercept-free projection of zero-sum cluster scores.
        let inp = inputs(s.clone(), DMatrix::from_element(4, 1, 1.0), &idx, false);
        let h = DMatrix::identity(1, 1);
        let adj = adjusted_twoway(&inp, 2, &h).unwrap();
        let cgm2 = crate::variance::v_cgm2(&s, &h, &idx).unwrap();
        assert!((adj.report.v - cgm2.v).amax() < 1e-15);
    }

    #[test]
    fn case_one_all_sampled_drops_cluster_term() {
        let s = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, -1.0, -2.0]);
        let idx = ClusterIndex::one_way(&[0, 0, 1, 1]);
        let z = DMatrix::from_row_slice(4, 1, &[0.5, 1.0, 0.0, 2.0]);
        let inp = inputs(s.clone(), z, &idx, true);
        let h = DMatrix::identity(1, 1);
        let adj = adjusted_oneway(&inp, Dim::G, 1, &h).unwrap();
        let expected = meat_ehw(&s).value - delta_z(&inp).unwrap().value;
        assert!((adj.report.v - expected).amax() < 1e-14);
    }
}
