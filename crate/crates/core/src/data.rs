//! Cluster bookkeeping, observed datasets and design descriptors.

use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A clustering dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dim {
    G,
    H,
    /// The (g, h) intersection cells.
    Intersection,
}

impl std::fmt::Display for Dim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dim::G => write!(f, "G"),
            Dim::H => write!(f, "H"),
            Dim::Intersection => write!(f, "GxH"),
        }
    }
}

/// Dense cluster labels on the G and H dimensions, plus intersection cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterIndex {
    g: Vec<usize>,
    h: Vec<usize>,
    cell: Vec<usize>,
    cell_keys: Vec<(usize, usize)>,
    n_g: usize,
    n_h: usize,
    one_way: bool,
}

fn relabel<T: Hash + Eq + Clone>(raw: &[T]) -> (Vec<usize>, usize) {
    let mut map: HashMap<T, usize> = HashMap::new();
    let mut out = Vec::with_capacity(raw.len());
    for label in raw {
        let next = map.len();
        let id = *map.entry(label.clone()).or_insert(next);
        out.push(id);
    }
    (out, map.len())
}

impl ClusterIndex {
    /// Relabels arbitrary labels densely in order of first appearance.
    ///
    /// `raw_h = None` means one-way data: the H partition is set equal to G.
    pub fn canonicalize<T: Hash + Eq + Clone>(raw_g: &[T], raw_h: Option<&[T]>) -> Result<Self> {
        if let Some(h) = raw_h {
            if h.len() != raw_g.len() {
                return Err(Error::Input(format!(
                    "cluster label vectors differ in length ({} vs {})",
                    raw_g.len(),
                    h.len()
                )));
            }
        }
        let (g, n_g) = relabel(raw_g);
        let (h, n_h, one_way) = match raw_h {
            Some(raw) => {
                let (h, n_h) = relabel(raw);
                (h, n_h, false)
            }
            None => (g.clone(), n_g, true),
        };
        Ok(Self::from_dense(g, h, n_g, n_h, one_way))
    }

    /// Builds an index from integer labels, relabeling them densely.
    pub fn from_ids(g: &[usize], h: &[usize]) -> Result<Self> {
        Self::canonicalize(g, Some(h))
    }

    /// One-way index: H coincides with G.
    pub fn one_way(g: &[usize]) -> Self {
        let (g, n_g) = relabel(g);
        Self::from_dense(g.clone(), g, n_g, n_g, true)
    }

    fn from_dense(g: Vec<usize>, h: Vec<usize>, n_g: usize, n_h: usize, one_way: bool) -> Self {
        let pairs: Vec<(usize, usize)> = g.iter().zip(&h).map(|(&a, &b)| (a, b)).collect();
        let (cell, _) = relabel(&pairs);
        let mut cell_keys = vec![(0, 0); cell.iter().map(|c| c + 1).max().unwrap_or(0)];
        for (c, p) in cell.iter().zip(&pairs) {
            cell_keys[*c] = *p;
        }
        ClusterIndex {
            g,
            h,
            cell,
            cell_keys,
            n_g,
            n_h,
            one_way,
        }
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// True when the index was built without a separate H partition.
    pub fn is_one_way(&self) -> bool {
        self.one_way
    }

    pub fn labels(&self, dim: Dim) -> &[usize] {
        match dim {
            Dim::G => &self.g,
            Dim::H => &self.h,
            Dim::Intersection => &self.cell,
        }
    }

    /// Number of distinct clusters on `dim` (G_N, H_N or the number of cells).
    pub fn count(&self, dim: Dim) -> usize {
        match dim {
            Dim::G => self.n_g,
            Dim::H => self.n_h,
            Dim::Intersection => self.cell_keys.len(),
        }
    }

    /// Number of rows in each cluster on `dim`.
    pub fn sizes(&self, dim: Dim) -> Vec<usize> {
        let mut sizes = vec![0; self.count(dim)];
        for &c in self.labels(dim) {
            sizes[c] += 1;
        }
        sizes
    }

    /// Intersection cells with their member row ids, in order of first appearance.
    pub fn intersection_cells(&self) -> Vec<((usize, usize), Vec<usize>)> {
        let mut cells: Vec<((usize, usize), Vec<usize>)> =
            self.cell_keys.iter().map(|&k| (k, Vec::new())).collect();
        for (i, &c) in self.cell.iter().enumerate() {
            cells[c].1.push(i);
        }
        cells
    }

    /// Restricts the index to the given rows and relabels densely.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let g: Vec<usize> = rows.iter().map(|&i| self.g[i]).collect();
        if self.one_way {
            return Self::one_way(&g);
        }
        let h: Vec<usize> = rows.iter().map(|&i| self.h[i]).collect();
        let (g, n_g) = relabel(&g);
        let (h, n_h) = relabel(&h);
        Self::from_dense(g, h, n_g, n_h, false)
    }
}

/// Population-level bookkeeping supplied by the user.
///
/// Fields left as `None` default to the full-population values (M = n,
/// G = G_N, H = H_N) for the unadjusted estimators; the shrinkage-adjusted
/// families refuse to run without them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationMeta {
    pub population_size: Option<usize>,
    pub total_g: Option<usize>,
    pub total_h: Option<usize>,
}

impl PopulationMeta {
    /// Metadata for a fully observed population of `m` units on a G × H grid.
    pub fn full(m: usize, g: usize, h: usize) -> Self {
        PopulationMeta {
            population_size: Some(m),
            total_g: Some(g),
            total_h: Some(h),
        }
    }
}

/// Observed sample: outcomes, assignment columns, fixed attributes and clusters.
#[derive(Debug, Clone)]
pub struct ObservedDataset {
    pub y: DVector<f64>,
    /// Assignment columns (n × a).
    pub x: DMatrix<f64>,
    /// Fixed attribute columns (n × p), used as controls.
    pub z: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
    pub clusters: ClusterIndex,
    /// Time period per row, for panel designs.
    pub period: Option<Vec<usize>>,
    pub meta: PopulationMeta,
}

impl ObservedDataset {
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        clusters: ClusterIndex,
        meta: PopulationMeta,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        if x.nrows() != n || z.nrows() != n || clusters.len() != n {
            return Err(Error::Input(format!(
                "row counts disagree: y {}, x {}, z {}, clusters {}",
                n,
                x.nrows(),
                z.nrows(),
                clusters.len()
            )));
        }
        if let Some(m) = meta.population_size {
            if n > m {
                return Err(Error::Input(format!("sample size {n} exceeds population size {m}")));
            }
        }
        for (total, dim) in [(meta.total_g, Dim::G), (meta.total_h, Dim::H)] {
            if let Some(t) = total {
                if clusters.count(dim) > t {
                    return Err(Error::Input(format!(
                        "{} sampled {dim} clusters exceed the stated total {t}",
                        clusters.count(dim)
                    )));
                }
            }
        }
        let x_names = (0..x.ncols()).map(|j| format!("x{}", j + 1)).collect();
        let z_names = (0..z.ncols()).map(|j| format!("z{}", j + 1)).collect();
        Ok(ObservedDataset {
            y,
            x,
            z,
            x_names,
            z_names,
            clusters,
            period: None,
            meta,
        })
    }

    pub fn with_names(mut self, x_names: Vec<String>, z_names: Vec<String>) -> Self {
        assert_eq!(x_names.len(), self.x.ncols());
        assert_eq!(z_names.len(), self.z.ncols());
        self.x_names = x_names;
        self.z_names = z_names;
        self
    }

    pub fn with_period(mut self, period: Vec<usize>) -> Self {
        assert_eq!(period.len(), self.n());
        self.period = Some(period);
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Population size, defaulting to the sample size.
    pub fn population_size(&self) -> usize {
        self.meta.population_size.unwrap_or(self.n())
    }

    pub fn total_clusters(&self, dim: Dim) -> usize {
        match dim {
            Dim::G => self.meta.total_g.unwrap_or(self.clusters.count(Dim::G)),
            Dim::H => self.meta.total_h.unwrap_or(self.clusters.count(Dim::H)),
            Dim::Intersection => self.clusters.count(Dim::Intersection),
        }
    }

    /// `[1, X, Z]` (intercept optional) with column names.
    pub fn design_matrix(&self, intercept: bool) -> (DMatrix<f64>, Vec<String>) {
        let n = self.n();
        let k = usize::from(intercept) + self.x.ncols() + self.z.ncols();
        let mut d = DMatrix::<f64>::zeros(n, k);
        let mut names = Vec::with_capacity(k);
        let mut col = 0;
        if intercept {
            d.column_mut(0).fill(1.0);
            names.push("(intercept)".to_string());
            col = 1;
        }
        for j in 0..self.x.ncols() {
            d.set_column(col, &self.x.column(j));
            names.push(self.x_names[j].clone());
            col += 1;
        }
        for j in 0..self.z.ncols() {
            d.set_column(col, &self.z.column(j));
            names.push(self.z_names[j].clone());
            col += 1;
        }
        (d, names)
    }
}

/// How units enter the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    Population,
    UnitBernoulli { rho_u: f64 },
    OneWayCluster { dim: Dim, rho_c: f64, rho_u: f64 },
    TwoWayCluster { rho_g: f64, rho_h: f64, rho_u: f64 },
}

/// How assignments are correlated across units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Independent,
    OneWayClustered(Dim),
    TwoWayClustered,
    IntersectionClustered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignDescriptor {
    pub sampling: Sampling,
    pub assignment: Assignment,
}

impl DesignDescriptor {
    pub fn new(sampling: Sampling, assignment: Assignment) -> Result<Self> {
        let probs: Vec<f64> = match sampling {
            Sampling::Population => vec![],
            Sampling::UnitBernoulli { rho_u } => vec![rho_u],
            Sampling::OneWayCluster { rho_c, rho_u, .. } => vec![rho_c, rho_u],
            Sampling::TwoWayCluster { rho_g, rho_h, rho_u } => vec![rho_g, rho_h, rho_u],
        };
        if probs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Input(format!("sampling probabilities must lie in (0, 1]: {probs:?}")));
        }
        Ok(DesignDescriptor { sampling, assignment })
    }

    /// (ρ_g, ρ_h, ρ_u); dimensions without cluster sampling report 1.
    pub fn probabilities(&self) -> (f64, f64, f64) {
        match self.sampling {
            Sampling::Population => (1.0, 1.0, 1.0),
            Sampling::UnitBernoulli { rho_u } => (1.0, 1.0, rho_u),
            Sampling::OneWayCluster { dim: Dim::H, rho_c, rho_u } => (1.0, rho_c, rho_u),
            Sampling::OneWayCluster { rho_c, rho_u, .. } => (rho_c, 1.0, rho_u),
            Sampling::TwoWayCluster { rho_g, rho_h, rho_u } => (rho_g, rho_h, rho_u),
        }
    }

    pub fn is_population(&self) -> bool {
        self.probabilities() == (1.0, 1.0, 1.0)
    }

    /// Row of the one-way adjustment table matching this design on `dim`.
    pub fn oneway_case(&self, dim: Dim) -> u8 {
        let (rg, rh, _) = self.probabilities();
        let cluster_sampled = match dim {
            Dim::H => rh < 1.0,
            _ => rg < 1.0,
        };
        let cluster_assigned = !matches!(self.assignment, Assignment::Independent);
        match (cluster_sampled, cluster_assigned) {
            (true, false) => 1,
            (false, true) => 2,
            (true, true) => 3,
            (false, false) => 4,
        }
    }
}
