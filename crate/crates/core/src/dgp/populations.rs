//! Simulation populations: fixed attributes, unobservables and potential
//! outcomes on a G × H grid, plus the per-replication assignment draws.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng::{bernoulli, rademacher, substream, Purpose};
use crate::data::{ClusterIndex, ObservedDataset, PopulationMeta};
use crate::linalg::Basis;
use crate::{Error, Result};

/// The named simulation designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DesignName {
    #[serde(rename = "probit-oneway")]
    ProbitOneWay,
    #[serde(rename = "probit-twoway")]
    ProbitTwoWay,
    #[serde(rename = "twovar-1")]
    TwoVar1,
    #[serde(rename = "twovar-2")]
    TwoVar2,
    #[serde(rename = "tripled-1")]
    Tripled1,
    #[serde(rename = "tripled-2")]
    Tripled2,
}

impl DesignName {
    pub const ALL: [DesignName; 6] = [
        DesignName::ProbitOneWay,
        DesignName::ProbitTwoWay,
        DesignName::TwoVar1,
        DesignName::TwoVar2,
        DesignName::Tripled1,
        DesignName::Tripled2,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DesignName::ProbitOneWay => "probit-oneway",
            DesignName::ProbitTwoWay => "probit-twoway",
            DesignName::TwoVar1 => "twovar-1",
            DesignName::TwoVar2 => "twovar-2",
            DesignName::Tripled1 => "tripled-1",
            DesignName::Tripled2 => "tripled-2",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        DesignName::ALL
            .into_iter()
            .find(|d| d.as_str() == name)
            .ok_or_else(|| {
                let known: Vec<&str> = DesignName::ALL.iter().map(|d| d.as_str()).collect();
                Error::Input(format!("unknown design '{name}'; expected one of {known:?}"))
            })
    }
}

impl std::fmt::Display for DesignName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Assignment mechanisms, all built from independent cluster-level
/// Bernoulli draws `A_g` and `B_h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AssignmentRule {
    /// `X = A_g`.
    OneWayBernoulli { p: f64 },
    /// `X = A_g · B_h`.
    TwoWayProduct { p_a: f64, p_b: f64 },
    /// Two columns `(A_g, B_h)`.
    TwoVariable { p_g: f64, p_h: f64 },
    /// `D = D_g · D_h · Post`.
    TripleDiff { p_g: f64, p_h: f64 },
}

/// Blueprint of a simulation population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub design: DesignName,
    pub g: usize,
    pub h: usize,
    #[serde(default = "default_units")]
    pub units_per_cell: usize,
    pub seed: u64,
    /// Standard deviation of the idiosyncratic term for the linear designs.
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
}

fn default_units() -> usize {
    1
}

fn default_noise() -> f64 {
    1.0
}

/// Default idiosyncratic standard deviation of the triple-differences design.
pub const TRIPLED_NOISE_SD: f64 = 1.0;

impl PopulationSpec {
    /// The grid and parameters used in the published tables.
    pub fn paper(design: DesignName, seed: u64) -> Self {
        let (g, noise_sd) = match design {
            DesignName::ProbitOneWay | DesignName::ProbitTwoWay => (50, 1.0),
            DesignName::TwoVar1 | DesignName::TwoVar2 => (100, 1.0),
            DesignName::Tripled1 | DesignName::Tripled2 => (100, TRIPLED_NOISE_SD),
        };
        PopulationSpec {
            design,
            g,
            h: g,
            units_per_cell: 1,
            seed,
            noise_sd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.g == 0 || self.h == 0 || self.units_per_cell == 0 {
            return Err(Error::Input("grid dimensions must be positive".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Input(format!("noise_sd must be finite and nonnegative, got {}", self.noise_sd)));
        }
        Ok(())
    }

    pub fn units(&self) -> usize {
        self.g * self.h * self.units_per_cell
    }

    pub fn rule(&self) -> AssignmentRule {
        match self.design {
            DesignName::ProbitOneWay => AssignmentRule::OneWayBernoulli { p: 0.5 },
            DesignName::ProbitTwoWay => AssignmentRule::TwoWayProduct { p_a: 0.5, p_b: 0.5 },
            DesignName::TwoVar1 | DesignName::TwoVar2 => AssignmentRule::TwoVariable { p_g: 0.5, p_h: 0.5 },
            DesignName::Tripled1 | DesignName::Tripled2 => AssignmentRule::TripleDiff { p_g: 0.5, p_h: 0.5 },
        }
    }
}

/// Cluster labels of the units of a G × H grid with `k` units per cell,
/// ordered cell by cell.
pub fn grid_labels(g: usize, h: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    let n = g * h * k;
    let gl = (0..n).map(|i| i / (h * k)).collect();
    let hl = (0..n).map(|i| (i / k) % h).collect();
    (gl, hl)
}

/// Cluster-level draws of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentDraw {
    pub a: Vec<bool>,
    pub b: Vec<bool>,
}

/// Draws `A_g` (G draws) then `B_h` (H draws) from the replication's
/// assignment stream.
pub fn draw_cluster_bits(rule: AssignmentRule, n_g: usize, n_h: usize, seed: u64, rep: u64) -> AssignmentDraw {
    let (pa, pb) = match rule {
        AssignmentRule::OneWayBernoulli { p } => (p, 1.0),
        AssignmentRule::TwoWayProduct { p_a, p_b } => (p_a, p_b),
        AssignmentRule::TwoVariable { p_g, p_h } => (p_g, p_h),
        AssignmentRule::TripleDiff { p_g, p_h } => (p_g, p_h),
    };
    let mut rng = substream(seed, rep, Purpose::Assignment);
    let a = (0..n_g).map(|_| bernoulli(&mut rng, pa)).collect();
    let b = (0..n_h).map(|_| bernoulli(&mut rng, pb)).collect();
    AssignmentDraw { a, b }
}

/// Binary-response population: `y_i(x) = 1[x + 2 z_i x + e_i > 0]`.
#[derive(Debug, Clone)]
pub struct ProbitPopulation {
    pub spec: PopulationSpec,
    pub clusters: ClusterIndex,
    pub z: DVector<f64>,
    pub e: DVector<f64>,
}

impl ProbitPopulation {
    pub fn outcome(&self, i: usize, x: f64) -> f64 {
        f64::from(x + 2.0 * self.z[i] * x + self.e[i] > 0.0)
    }

    /// Probability that a unit is treated.
    pub fn treatment_probability(&self) -> f64 {
        match self.spec.rule() {
            AssignmentRule::OneWayBernoulli { p } => p,
            AssignmentRule::TwoWayProduct { p_a, p_b } => p_a * p_b,
            _ => unreachable!("probit designs use one- or two-way product assignment"),
        }
    }
}

/// Two assignment variables: `y_i = τ1_i x_g + τ2_i x_h + e_i`.
#[derive(Debug, Clone)]
pub struct TwoVarPopulation {
    pub spec: PopulationSpec,
    pub clusters: ClusterIndex,
    pub tau1: DVector<f64>,
    pub tau2: DVector<f64>,
    pub e: DVector<f64>,
}

/// Triple differences over two periods: `Y_it = τ_i D_it + ε_it` with
/// `D_it = D_g D_h Post_t`. The fixed effects are zero; they are absorbed
/// exactly by the estimator.
#[derive(Debug, Clone)]
pub struct TripledPopulation {
    pub spec: PopulationSpec,
    /// Unit-level clusters (one unit per cell).
    pub clusters: ClusterIndex,
    pub tau: DVector<f64>,
    /// Idiosyncratic terms, indexed `2 i + t`.
    pub eps: DVector<f64>,
    /// Fixed group indicators in design 2.
    pub fixed_dg: Option<Vec<bool>>,
}

/// A built population of any design.
#[derive(Debug, Clone)]
pub enum Population {
    Probit(ProbitPopulation),
    TwoVar(TwoVarPopulation),
    Tripled(TripledPopulation),
}

fn normals<R: rand::Rng>(rng: &mut R, n: usize, sd: f64) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| {
        let v: f64 = StandardNormal.sample(rng);
        sd * v
    }))
}

/// Residual of `v` on the columns of `basis_cols`.
fn residualize(v: &DVector<f64>, basis_cols: &DMatrix<f64>) -> DVector<f64> {
    let fitted = Basis::new(basis_cols).project(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
    v - fitted.column(0)
}

/// §4-style binary-response population.
///
/// `z_i = z_g + z_h` with `z_h = ±1` and `z_g = ±1` (two-way) or `±2`
/// (one-way); `e` is a standard normal draw residualized on `(1, z)`.
pub fn build_probit_population(spec: &PopulationSpec) -> Result<ProbitPopulation> {
    spec.validate()?;
    let g_mag = match spec.design {
        DesignName::ProbitOneWay => 2.0,
        DesignName::ProbitTwoWay => 1.0,
        other => return Err(Error::Input(format!("{other} is not a probit design"))),
    };
    let (gl, hl) = grid_labels(spec.g, spec.h, spec.units_per_cell);
    let n = gl.len();
    let mut rng = substream(spec.seed, 0, Purpose::Population);
    let zg: Vec<f64> = (0..spec.g).map(|_| rademacher(&mut rng, g_mag)).collect();
    let zh: Vec<f64> = (0..spec.h).map(|_| rademacher(&mut rng, 1.0)).collect();
    let z = DVector::from_iterator(n, (0..n).map(|i| zg[gl[i]] + zh[hl[i]]));
    let raw = normals(&mut rng, n, 1.0);
    let mut design = DMatrix::from_element(n, 2, 1.0);
    design.set_column(1, &z);
    let e = residualize(&raw, &design);
    Ok(ProbitPopulation {
        spec: spec.clone(),
        clusters: ClusterIndex::from_ids(&gl, &hl)?,
        z,
        e,
    })
}

/// Two-assignment-variable population with ±1 cluster effects.
///
/// Design 1 crosses the effects (`τ1 = τ_h`, `τ2 = τ_g`); design 2 aligns
/// them (`τ1 = τ_g`, `τ2 = τ_h`). `e ~ N(0, noise_sd²)` is fixed.
pub fn build_twovar_population(spec: &PopulationSpec) -> Result<TwoVarPopulation> {
    spec.validate()?;
    let crossed = match spec.design {
        DesignName::TwoVar1 => true,
        DesignName::TwoVar2 => false,
        other => return Err(Error::Input(format!("{other} is not a two-variable design"))),
    };
    let (gl, hl) = grid_labels(spec.g, spec.h, spec.units_per_cell);
    let n = gl.len();
    let mut rng = substream(spec.seed, 0, Purpose::Population);
    let tg: Vec<f64> = (0..spec.g).map(|_| rademacher(&mut rng, 1.0)).collect();
    let th: Vec<f64> = (0..spec.h).map(|_| rademacher(&mut rng, 1.0)).collect();
    let e = normals(&mut rng, n, spec.noise_sd);
    let (tau1, tau2): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|i| if crossed { (th[hl[i]], tg[gl[i]]) } else { (tg[gl[i]], th[hl[i]]) })
        .unzip();
    Ok(TwoVarPopulation {
        spec: spec.clone(),
        clusters: ClusterIndex::from_ids(&gl, &hl)?,
        tau1: DVector::from_vec(tau1),
        tau2: DVector::from_vec(tau2),
        e,
    })
}

/// Triple-differences population.
///
/// `τ̃_i = τ_g + τ_h` with `τ_g = ±2`, `τ_h = ±1/2`. Design 1 demeans τ̃ over
/// all units; design 2 fixes `D_g` at build time and demeans τ̃ over units
/// with `D_g = 1`. `ε_it ~ N(0, noise_sd²)` is fixed per unit-period.
pub fn build_tripled_population(spec: &PopulationSpec) -> Result<TripledPopulation> {
    spec.validate()?;
    let design_two = match spec.design {
        DesignName::Tripled1 => false,
        DesignName::Tripled2 => true,
        other => return Err(Error::Input(format!("{other} is not a triple-differences design"))),
    };
    let (gl, hl) = grid_labels(spec.g, spec.h, spec.units_per_cell);
    let n = gl.len();
    let mut rng = substream(spec.seed, 0, Purpose::Population);
    let tg: Vec<f64> = (0..spec.g).map(|_| rademacher(&mut rng, 2.0)).collect();
    let th: Vec<f64> = (0..spec.h).map(|_| rademacher(&mut rng, 0.5)).collect();
    let eps = normals(&mut rng, 2 * n, spec.noise_sd);
    let fixed_dg: Option<Vec<bool>> = design_two.then(|| (0..spec.g).map(|_| bernoulli(&mut rng, 0.5)).collect());
    let raw: Vec<f64> = (0..n).map(|i| tg[gl[i]] + th[hl[i]]).collect();
    let centre = match &fixed_dg {
        None => raw.iter().sum::<f64>() / n as f64,
        Some(dg) => {
            let treated: Vec<f64> = (0..n).filter(|&i| dg[gl[i]]).map(|i| raw[i]).collect();
            if treated.is_empty() {
                return Err(Error::DegenerateDesign("no group has D_g = 1".into()));
            }
            treated.iter().sum::<f64>() / treated.len() as f64
        }
    };
    Ok(TripledPopulation {
        spec: spec.clone(),
        clusters: ClusterIndex::from_ids(&gl, &hl)?,
        tau: DVector::from_iterator(n, raw.iter().map(|t| t - centre)),
        eps,
        fixed_dg,
    })
}

impl Population {
    pub fn build(spec: &PopulationSpec) -> Result<Self> {
        Ok(match spec.design {
            DesignName::ProbitOneWay | DesignName::ProbitTwoWay => Population::Probit(build_probit_population(spec)?),
            DesignName::TwoVar1 | DesignName::TwoVar2 => Population::TwoVar(build_twovar_population(spec)?),
            DesignName::Tripled1 | DesignName::Tripled2 => Population::Tripled(build_tripled_population(spec)?),
        })
    }

    pub fn spec(&self) -> &PopulationSpec {
        match self {
            Population::Probit(p) => &p.spec,
            Population::TwoVar(p) => &p.spec,
            Population::Tripled(p) => &p.spec,
        }
    }

    /// Unit-level cluster index.
    pub fn clusters(&self) -> &ClusterIndex {
        match self {
            Population::Probit(p) => &p.clusters,
            Population::TwoVar(p) => &p.clusters,
            Population::Tripled(p) => &p.clusters,
        }
    }

    /// Number of population units.
    pub fn units(&self) -> usize {
        self.clusters().len()
    }

    /// Cluster-level draws of replication `rep`.
    pub fn draw_assignment(&self, rep: u64) -> AssignmentDraw {
        let spec = self.spec();
        draw_cluster_bits(spec.rule(), spec.g, spec.h, spec.seed, rep)
    }

    /// Unit-level assignment columns implied by a draw.
    pub fn assignment_columns(&self, draw: &AssignmentDraw) -> DMatrix<f64> {
        let c = self.clusters();
        let g = c.labels(crate::data::Dim::G);
        let h = c.labels(crate::data::Dim::H);
        let n = c.len();
        let bit = |b: bool| f64::from(u8::from(b));
        match self {
            Population::Probit(_) => DMatrix::from_fn(n, 1, |i, _| bit(draw.a[g[i]] && draw.b[h[i]])),
            Population::TwoVar(_) => DMatrix::from_fn(n, 2, |i, j| if j == 0 { bit(draw.a[g[i]]) } else { bit(draw.b[h[i]]) }),
            Population::Tripled(p) => {
                let dg = |gi: usize| p.fixed_dg.as_ref().map_or(draw.a[gi], |d| d[gi]);
                DMatrix::from_fn(n, 1, |i, _| bit(dg(g[i]) && draw.b[h[i]]))
            }
        }
    }

    /// The observed dataset of one replication (the full population).
    pub fn dataset(&self, draw: &AssignmentDraw) -> Result<ObservedDataset> {
        let x = self.assignment_columns(draw);
        let spec = self.spec();
        match self {
            Population::Probit(p) => {
                let n = p.clusters.len();
                let y = DVector::from_iterator(n, (0..n).map(|i| p.outcome(i, x[(i, 0)])));
                let z = DMatrix::from_column_slice(n, 1, p.z.as_slice());
                Ok(ObservedDataset::new(y, x, z, p.clusters.clone(), PopulationMeta::full(n, spec.g, spec.h))?
                    .with_names(vec!["x".into()], vec!["z".into()]))
            }
            Population::TwoVar(p) => {
                let n = p.clusters.len();
                let y = DVector::from_iterator(
                    n,
                    (0..n).map(|i| p.tau1[i] * x[(i, 0)] + p.tau2[i] * x[(i, 1)] + p.e[i]),
                );
                Ok(ObservedDataset::new(
                    y,
                    x,
                    DMatrix::zeros(n, 0),
                    p.clusters.clone(),
                    PopulationMeta::full(n, spec.g, spec.h),
                )?
                .with_names(vec!["x_g".into(), "x_h".into()], vec![]))
            }
            Population::Tripled(p) => {
                let n = p.clusters.len();
                let rows = 2 * n;
                let g = p.clusters.labels(crate::data::Dim::G);
                let h = p.clusters.labels(crate::data::Dim::H);
                let mut y = DVector::zeros(rows);
                let mut d = DMatrix::zeros(rows, 1);
                let mut tau = DMatrix::zeros(rows, 1);
                let mut gl = Vec::with_capacity(rows);
                let mut hl = Vec::with_capacity(rows);
                let mut period = Vec::with_capacity(rows);
                for i in 0..n {
                    for t in 0..2 {
                        let r = 2 * i + t;
                        let treated = if t == 1 { x[(i, 0)] } else { 0.0 };
                        d[(r, 0)] = treated;
                        y[r] = p.tau[i] * treated + p.eps[r];
                        tau[(r, 0)] = p.tau[i];
                        gl.push(g[i]);
                        hl.push(h[i]);
                        period.push(t);
                    }
                }
                let clusters = ClusterIndex::from_ids(&gl, &hl)?;
                Ok(ObservedDataset::new(y, d, tau, clusters, PopulationMeta::full(rows, spec.g, spec.h))?
                    .with_names(vec!["d".into()], vec!["tau".into()])
                    .with_period(period))
            }
        }
    }
}
