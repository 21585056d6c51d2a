use nalgebra::{DMatrix, DVector};

use super::{FittedModel, ModelKind};
use crate::data::{ClusterIndex, Dim, ObservedDataset};
use crate::{Error, Result};

const MAP_TOL: f64 = 1e-13;
const MAP_MAX_SWEEPS: usize = 100_000;

/// A fixed-effect residualized column.
#[derive(Debug, Clone)]
pub struct Residualized {
    pub values: DVector<f64>,
    /// True when the balanced-layout closed form was used; false when the
    /// column was demeaned by alternating projections.
    pub closed_form: bool,
}

fn dense_labels<T: std::hash::Hash + Eq + Clone>(raw: &[T]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let labels = raw
        .iter()
        .map(|k| {
            let next = map.len();
            *map.entry(k.clone()).or_insert(next)
        })
        .collect();
    (labels, map.len())
}

fn group_means(v: &DVector<f64>, labels: &[usize], n_groups: usize) -> Vec<f64> {
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (x, &c) in v.iter().zip(labels) {
        sums[c] += x;
        counts[c] += 1;
    }
    sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
}

/// Residual of `v` on the dummies of every factor, by alternating projections.
///
/// Each factor is a dense label vector; the fixed point is the residual from
/// regressing `v` on the union of all dummy sets.
pub fn demean_map(v: &DVector<f64>, factors: &[(Vec<usize>, usize)]) -> DVector<f64> {
    let mut r = v.clone();
    let scale = v.amax().max(1.0);
    for _ in 0..MAP_MAX_SWEEPS {
        let mut change: f64 = 0.0;
        for (labels, n_groups) in factors {
            let means = group_means(&r, labels, *n_groups);
            for (x, &c) in r.iter_mut().zip(labels) {
                *x -= means[c];
            }
            change = change.max(means.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
        }
        if change <= MAP_TOL * scale {
            break;
        }
    }
    r
}

fn is_balanced_grid(clusters: &ClusterIndex) -> bool {
    let cells = clusters.intersection_cells();
    if cells.len() != clusters.count(Dim::G) * clusters.count(Dim::H) {
        return false;
    }
    let first = cells[0].1.len();
    cells.iter().all(|(_, rows)| rows.len() == first)
}

/// Residual of `x` on full G and H dummy sets.
///
/// On balanced grids this is `x − x̄_g − x̄_h + x̄`; otherwise the column is
/// demeaned by alternating projections, which gives the dummy-regression
/// residual.
pub fn twfe_residualize(x: &DVector<f64>, clusters: &ClusterIndex) -> Residualized {
    let g = clusters.labels(Dim::G);
    let h = clusters.labels(Dim::H);
    if is_balanced_grid(clusters) {
        let mg = group_means(x, g, clusters.count(Dim::G));
        let mh = group_means(x, h, clusters.count(Dim::H));
        let grand = x.mean();
        let values = DVector::from_iterator(
            x.len(),
            x.iter().enumerate().map(|(i, v)| v - mg[g[i]] - mh[h[i]] + grand),
        );
        Residualized { values, closed_form: true }
    } else {
        let factors = vec![
            (g.to_vec(), clusters.count(Dim::G)),
            (h.to_vec(), clusters.count(Dim::H)),
        ];
        Residualized {
            values: demean_map(x, &factors),
            closed_form: false,
        }
    }
}

fn treatment_column(data: &ObservedDataset, treatment: usize) -> Result<DVector<f64>> {
    if treatment >= data.x.ncols() {
        return Err(Error::Input(format!(
            "treatment column {treatment} out of range ({} assignment columns)",
            data.x.ncols()
        )));
    }
    Ok(data.x.column(treatment).into_owned())
}

/// Builds the fit `τ̂ = x̃'y / x̃'x` from residualized columns.
fn ratio_fit(
    x_tilde: DVector<f64>,
    y_tilde: DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    name: String,
    kind: ModelKind,
) -> Result<FittedModel> {
    let den = x_tilde.dot(x);
    let scale = x.norm_squared().max(f64::MIN_POSITIVE);
    if den.abs() <= 1e-12 * scale {
        return Err(Error::DegenerateDesign(format!(
            "{name} has no variation left after removing the fixed effects"
        )));
    }
    let tau = x_tilde.dot(y) / den;
    Ok(FittedModel {
        theta_hat: DVector::from_element(1, tau),
        names: vec![name],
        kind,
        converged: true,
        iterations: 1,
        notes: Vec::new(),
        design: DMatrix::from_column_slice(x_tilde.len(), 1, x_tilde.as_slice()),
        response: y_tilde,
    })
}

/// One-way fixed-effects estimator `Σ Y(X − X̄_c) / Σ X(X − X̄_c)` with
/// cluster means on `dim`.
pub fn fit_one_way_fe(data: &ObservedDataset, treatment: usize, dim: Dim) -> Result<FittedModel> {
    let x = treatment_column(data, treatment)?;
    let labels = data.clusters.labels(dim);
    let n_groups = data.clusters.count(dim);
    let mx = group_means(&x, labels, n_groups);
    let my = group_means(&data.y, labels, n_groups);
    let x_tilde = DVector::from_iterator(x.len(), x.iter().zip(labels).map(|(v, &c)| v - mx[c]));
    let y_tilde = DVector::from_iterator(
        x.len(),
        data.y.iter().zip(labels).map(|(v, &c)| v - my[c]),
    );
    ratio_fit(
        x_tilde,
        y_tilde,
        &x,
        &data.y,
        data.x_names[treatment].clone(),
        ModelKind::OneWayFe,
    )
}

/// Two-way fixed-effects estimator with G and H dummies.
pub fn fit_twfe(data: &ObservedDataset, treatment: usize) -> Result<FittedModel> {
    let x = treatment_column(data, treatment)?;
    let xt = twfe_residualize(&x, &data.clusters);
    let yt = twfe_residualize(&data.y, &data.clusters);
    let mut model = ratio_fit(
        xt.values,
        yt.values,
        &x,
        &data.y,
        data.x_names[treatment].clone(),
        ModelKind::TwoWayFe,
    )?;
    if !xt.closed_form {
        model
            .notes
            .push("unbalanced layout: fixed effects removed by alternating projections".into());
    }
    Ok(model)
}

/// Proposition-style OWFE weights for `X = A_g B_h` with `E[A] = μ_A`,
/// `E[B] = μ_B`, from the population cluster layout.
pub fn owfe_weights(clusters: &ClusterIndex, mu_a: f64, mu_b: f64) -> Vec<f64> {
    let size_g = clusters.sizes(Dim::G);
    let size_cell = clusters.sizes(Dim::Intersection);
    let g = clusters.labels(Dim::G);
    let cell = clusters.labels(Dim::Intersection);
    (0..clusters.len())
        .map(|i| {
            let mg = size_g[g[i]] as f64;
            let mc = size_cell[cell[i]] as f64;
            mu_a * mu_b * (1.0 - (mc + (mg - mc) * mu_b) / mg)
        })
        .collect()
}

/// Triple-differences residualization of `v` on the (g,h), (h,t) and (g,t)
/// fixed effects.
fn ddd_residualize(
    v: &DVector<f64>,
    g: &[usize],
    h: &[usize],
    t: &[usize],
    dims: (usize, usize, usize),
) -> Residualized {
    let (ng, nh, nt) = dims;
    let n = v.len();
    let mut count = vec![0usize; ng * nh * nt];
    for i in 0..n {
        count[(g[i] * nh + h[i]) * nt + t[i]] += 1;
    }
    let balanced = count.iter().all(|&c| c == count[0] && c > 0);
    if balanced {
        let c = count[0] as f64;
        let mut cell = vec![0.0; ng * nh * nt];
        for i in 0..n {
            cell[(g[i] * nh + h[i]) * nt + t[i]] += v[i] / c;
        }
        let mut gh = vec![0.0; ng * nh];
        let mut ht = vec![0.0; nh * nt];
        let mut gt = vec![0.0; ng * nt];
        let mut mg = vec![0.0; ng];
        let mut mh = vec![0.0; nh];
        let mut mt = vec![0.0; nt];
        let mut grand = 0.0;
        for a in 0..ng {
            for b in 0..nh {
                for s in 0..nt {
                    let x = cell[(a * nh + b) * nt + s];
                    gh[a * nh + b] += x / nt as f64;
                    ht[b * nt + s] += x / ng as f64;
                    gt[a * nt + s] += x / nh as f64;
                    mg[a] += x / (nh * nt) as f64;
                    mh[b] += x / (ng * nt) as f64;
                    mt[s] += x / (ng * nh) as f64;
                    grand += x / (ng * nh * nt) as f64;
                }
            }
        }
        let values = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let (a, b, s) = (g[i], h[i], t[i]);
                v[i] - gh[a * nh + b] - gt[a * nt + s] - ht[b * nt + s] + mg[a] + mh[b] + mt[s]
                    - grand
            }),
        );
        Residualized { values, closed_form: true }
    } else {
        let gh: Vec<(usize, usize)> = g.iter().zip(h).map(|(&a, &b)| (a, b)).collect();
        let htp: Vec<(usize, usize)> = h.iter().zip(t).map(|(&a, &b)| (a, b)).collect();
        let gtp: Vec<(usize, usize)> = g.iter().zip(t).map(|(&a, &b)| (a, b)).collect();
        let factors = vec![dense_labels(&gh), dense_labels(&htp), dense_labels(&gtp)];
        Residualized {
            values: demean_map(v, &factors),
            closed_form: false,
        }
    }
}

/// Triple-differences regression of `y` on the treatment in assignment
/// column 0 plus group-stratum, stratum-time and group-time fixed effects.
///
/// G is the group dimension, H the stratum dimension; periods come from
/// `data.period`.
pub fn fit_triple_diff(data: &ObservedDataset) -> Result<FittedModel> {
    let period = data
        .period
        .as_ref()
        .ok_or_else(|| Error::Input("triple differences needs a period column".into()))?;
    let (t, nt) = dense_labels(period);
    if nt < 2 {
        return Err(Error::Input("triple differences needs at least two periods".into()));
    }
    let x = treatment_column(data, 0)?;
    let g = data.clusters.labels(Dim::G);
    let h = data.clusters.labels(Dim::H);
    let dims = (data.clusters.count(Dim::G), data.clusters.count(Dim::H), nt);
    let xt = ddd_residualize(&x, g, h, &t, dims);
    let yt = ddd_residualize(&data.y, g, h, &t, dims);
    let name = data.x_names[0].clone();
    let mut model = ratio_fit(xt.values, yt.values, &x, &data.y, name.clone(), ModelKind::TripleDiff)
        .map_err(|_| Error::SingularDesign { columns: vec![name] })?;
    if !xt.closed_form {
        model
            .notes
            .push("unbalanced layout: fixed effects removed by alternating projections".into());
    }
    Ok(model)
}
