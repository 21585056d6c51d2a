//! Exhaustive enumeration over every cluster-level assignment (and
//! sampling) configuration of a tiny population.
//!
//! Expectations computed here are exact sums over all `2^(G+H)` draws of
//! `(A_g, B_h)`, so they serve as oracles for closed-form moments,
//! estimands and population parameters.

use nalgebra::{DMatrix, DVector};

use crate::data::{ClusterIndex, Dim};
use crate::mestimation::{probit_unit, twfe_residualize};
use crate::{Error, Result};

/// Largest number of binary draws enumerated.
pub const ENUMERATION_CAP: usize = 16;

/// `X_i = A_g(i) · B_h(i)` with independent Bernoulli cluster draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductRule {
    pub p_a: f64,
    pub p_b: f64,
}

impl ProductRule {
    pub fn new(p_a: f64, p_b: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_a) || !(0.0..=1.0).contains(&p_b) {
            return Err(Error::Input(format!("assignment probabilities ({p_a}, {p_b}) outside [0, 1]")));
        }
        Ok(ProductRule { p_a, p_b })
    }

    pub fn treated_probability(&self) -> f64 {
        self.p_a * self.p_b
    }
}

/// One cluster-level configuration and its probability.
#[derive(Debug, Clone)]
pub struct Configuration {
    pub weight: f64,
    pub a: Vec<bool>,
    pub b: Vec<bool>,
}

impl Configuration {
    /// Unit treatments implied by the configuration.
    pub fn treatment(&self, clusters: &ClusterIndex) -> DVector<f64> {
        let g = clusters.labels(Dim::G);
        let h = clusters.labels(Dim::H);
        DVector::from_iterator(
            clusters.len(),
            (0..clusters.len()).map(|i| f64::from(u8::from(self.a[g[i]] && self.b[h[i]]))),
        )
    }
}

fn check_cap(requested: usize) -> Result<()> {
    if requested > ENUMERATION_CAP {
        return Err(Error::EnumerationTooLarge { requested, cap: ENUMERATION_CAP });
    }
    Ok(())
}

fn bernoulli_weight(bit: bool, p: f64) -> f64 {
    if bit {
        p
    } else {
        1.0 - p
    }
}

/// All configurations of positive probability.
pub fn configurations(n_g: usize, n_h: usize, rule: ProductRule) -> Result<Vec<Configuration>> {
    check_cap(n_g + n_h)?;
    let bits = n_g + n_h;
    let mut out = Vec::new();
    for code in 0u64..(1u64 << bits) {
        let a: Vec<bool> = (0..n_g).map(|j| code >> j & 1 == 1).collect();
        let b: Vec<bool> = (0..n_h).map(|j| code >> (n_g + j) & 1 == 1).collect();
        let weight = a.iter().map(|&v| bernoulli_weight(v, rule.p_a)).product::<f64>()
            * b.iter().map(|&v| bernoulli_weight(v, rule.p_b)).product::<f64>();
        if weight > 0.0 {
            out.push(Configuration { weight, a, b });
        }
    }
    Ok(out)
}

/// Exact `E[X_i X_j]` for every pair of units.
pub fn treatment_cross_moments(clusters: &ClusterIndex, rule: ProductRule) -> Result<DMatrix<f64>> {
    let n = clusters.len();
    let mut out = DMatrix::zeros(n, n);
    for cfg in configurations(clusters.count(Dim::G), clusters.count(Dim::H), rule)? {
        let x = cfg.treatment(clusters);
        out += (&x * x.transpose()) * cfg.weight;
    }
    Ok(out)
}

/// Exact inclusion moments of two-stage Bernoulli sampling: marginal
/// inclusion probabilities and the covariance matrix of the indicators.
pub fn inclusion_moments(
    clusters: &ClusterIndex,
    rho_g: f64,
    rho_h: f64,
    rho_u: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (ng, nh, n) = (clusters.count(Dim::G), clusters.count(Dim::H), clusters.len());
    check_cap(ng + nh + n)?;
    let g = clusters.labels(Dim::G);
    let h = clusters.labels(Dim::H);
    let mut mean = DVector::zeros(n);
    let mut second = DMatrix::zeros(n, n);
    for code in 0u64..(1u64 << (ng + nh + n)) {
        let bit = |j: usize| code >> j & 1 == 1;
        let mut w = 1.0;
        for j in 0..ng {
            w *= bernoulli_weight(bit(j), rho_g);
        }
        for j in 0..nh {
            w *= bernoulli_weight(bit(ng + j), rho_h);
        }
        for i in 0..n {
            w *= bernoulli_weight(bit(ng + nh + i), rho_u);
        }
        if w == 0.0 {
            continue;
        }
        let r = DVector::from_iterator(
            n,
            (0..n).map(|i| f64::from(u8::from(bit(g[i]) && bit(ng + h[i]) && bit(ng + nh + i)))),
        );
        mean += &r * w;
        second += (&r * r.transpose()) * w;
    }
    let cov = &second - &mean * mean.transpose();
    Ok((mean, cov))
}

/// Link between potential outcomes and the unit objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitModel {
    /// Least squares on `(1, x, z_i)`.
    Linear,
    /// Probit likelihood on `(1, x, z_i)`.
    Probit,
}

/// Fixed potential outcomes and attributes of a finite population with a
/// single binary treatment.
#[derive(Debug, Clone)]
pub struct PotentialOutcomes {
    pub model: UnitModel,
    pub y0: DVector<f64>,
    pub y1: DVector<f64>,
    /// Controls entering the design row after `(1, x)`; may have no columns.
    pub controls: DMatrix<f64>,
}

impl PotentialOutcomes {
    pub fn units(&self) -> usize {
        self.y0.len()
    }

    pub fn k(&self) -> usize {
        2 + self.controls.ncols()
    }

    pub fn design_row(&self, i: usize, x: f64) -> DVector<f64> {
        let mut d = DVector::zeros(self.k());
        d[0] = 1.0;
        d[1] = x;
        for j in 0..self.controls.ncols() {
            d[2 + j] = self.controls[(i, j)];
        }
        d
    }

    pub fn outcome(&self, i: usize, x: f64) -> f64 {
        if x > 0.5 {
            self.y1[i]
        } else {
            self.y0[i]
        }
    }

    /// Score `m_i(θ)` and its Jacobian when unit `i` has treatment `x`.
    pub fn unit_score(&self, i: usize, x: f64, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.design_row(i, x);
        let y = self.outcome(i, x);
        match self.model {
            UnitModel::Linear => {
                let resid = y - d.dot(theta);
                (&d * -resid, &d * d.transpose())
            }
            UnitModel::Probit => probit_unit(&d, y, theta),
        }
    }

    /// `(1/M) Σ_i (y_i(1) − y_i(0))`.
    pub fn average_effect(&self) -> f64 {
        (&self.y1 - &self.y0).mean()
    }
}

/// Newton iterations on a mean score `θ ↦ (ḡ(θ), J̄(θ))`.
pub fn newton_solve<F>(k: usize, mut mean_score: F, tol: f64, max_iter: usize) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let mut theta = DVector::zeros(k);
    let mut norm = f64::INFINITY;
    for _ in 0..max_iter {
        let (g, j) = mean_score(&theta);
        norm = g.amax();
        if !norm.is_finite() {
            break;
        }
        if norm < tol {
            return Ok(theta);
        }
        let step = j.lu().solve(&g).ok_or(Error::SingularHessian { condition: f64::INFINITY })?;
        theta -= step;
    }
    Err(Error::NonConvergence { iterations: max_iter, gradient_norm: norm })
}

/// Population parameter θ* solving `Σ_i E[m_i(θ)] = 0`, with the expectation
/// taken by enumeration.
pub fn enumerated_theta_star(pop: &PotentialOutcomes, clusters: &ClusterIndex, rule: ProductRule) -> Result<DVector<f64>> {
    let cfgs = configurations(clusters.count(Dim::G), clusters.count(Dim::H), rule)?;
    let xs: Vec<(f64, DVector<f64>)> = cfgs.iter().map(|c| (c.weight, c.treatment(clusters))).collect();
    let m = pop.units() as f64;
    newton_solve(
        pop.k(),
        |theta| {
            let mut g = DVector::zeros(pop.k());
            let mut j = DMatrix::zeros(pop.k(), pop.k());
            for (w, x) in &xs {
                for i in 0..pop.units() {
                    let (s, h) = pop.unit_score(i, x[i], theta);
                    g += s * (*w / m);
                    j += h * (*w / m);
                }
            }
            (g, j)
        },
        1e-13,
        200,
    )
}

/// Exact second-moment objects of an M-estimator under a product rule,
/// all scaled by `1/M`.
#[derive(Debug, Clone)]
pub struct VarianceOracle {
    pub theta_star: DVector<f64>,
    /// `L = (1/M) Σ_i E[∇m_i(θ*)]`.
    pub hessian: DMatrix<f64>,
    /// `Var((1/√M) Σ_i m_i(θ*))`.
    pub true_meat: DMatrix<f64>,
    /// `(1/M) Σ_i E[m_i m_i']`.
    pub ehw: DMatrix<f64>,
    /// Cross products of distinct units in the same intersection.
    pub delta_intersection: DMatrix<f64>,
    /// Same G cluster, different H cluster.
    pub delta_g: DMatrix<f64>,
    /// Same H cluster, different G cluster.
    pub delta_h: DMatrix<f64>,
}

impl VarianceOracle {
    fn wrap(&self, meat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        crate::linalg::sandwich_product(&self.hessian, meat)
    }

    /// Asymptotic variance of `√M (θ̂ − θ*)`.
    pub fn true_variance(&self) -> Result<DMatrix<f64>> {
        self.wrap(&self.true_meat)
    }

    /// Probability limit of the CGM estimator.
    pub fn cgm_estimand(&self) -> Result<DMatrix<f64>> {
        self.wrap(&(&self.ehw + &self.delta_g + &self.delta_h + &self.delta_intersection))
    }

    /// Probability limit of the CGM2 estimator.
    pub fn cgm2_estimand(&self) -> Result<DMatrix<f64>> {
        self.wrap(&(&self.ehw * 2.0 + &self.delta_g + &self.delta_h + &self.delta_intersection * 2.0))
    }
}

/// Enumerates every configuration to obtain θ*, the true variance and the
/// CGM/CGM2 estimands.
pub fn variance_oracle(pop: &PotentialOutcomes, clusters: &ClusterIndex, rule: ProductRule) -> Result<VarianceOracle> {
    let theta = enumerated_theta_star(pop, clusters, rule)?;
    let cfgs = configurations(clusters.count(Dim::G), clusters.count(Dim::H), rule)?;
    let (n, k) = (pop.units(), pop.k());
    let g = clusters.labels(Dim::G);
    let h = clusters.labels(Dim::H);
    let mut hessian = DMatrix::zeros(k, k);
    let mut total_mean = DVector::zeros(k);
    let mut total_second = DMatrix::zeros(k, k);
    let mut ehw = DMatrix::zeros(k, k);
    let mut di = DMatrix::zeros(k, k);
    let mut dg = DMatrix::zeros(k, k);
    let mut dh = DMatrix::zeros(k, k);
    for cfg in &cfgs {
        let x = cfg.treatment(clusters);
        let mut scores = Vec::with_capacity(n);
        for i in 0..n {
            let (s, j) = pop.unit_score(i, x[i], &theta);
            hessian += j * cfg.weight;
            scores.push(s);
        }
        let sum: DVector<f64> = scores.iter().fold(DVector::zeros(k), |acc, s| acc + s);
        total_mean += &sum * cfg.weight;
        total_second += (&sum * sum.transpose()) * cfg.weight;
        for i in 0..n {
            for j in 0..n {
                let outer = (&scores[i] * scores[j].transpose()) * cfg.weight;
                match (i == j, g[i] == g[j], h[i] == h[j]) {
                    (true, _, _) => ehw += outer,
                    (false, true, true) => di += outer,
                    (false, true, false) => dg += outer,
                    (false, false, true) => dh += outer,
                    _ => {}
                }
            }
        }
    }
    let m = n as f64;
    Ok(VarianceOracle {
        theta_star: theta,
        hessian: hessian / m,
        true_meat: (total_second - &total_mean * total_mean.transpose()) / m,
        ehw: ehw / m,
        delta_intersection: di / m,
        delta_g: dg / m,
        delta_h: dh / m,
    })
}

fn ratio_estimand<F>(pop: &PotentialOutcomes, clusters: &ClusterIndex, rule: ProductRule, residualize: F) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut num = 0.0;
    let mut den = 0.0;
    for cfg in configurations(clusters.count(Dim::G), clusters.count(Dim::H), rule)? {
        let x = cfg.treatment(clusters);
        let xt = residualize(&x);
        for i in 0..pop.units() {
            num += cfg.weight * xt[i] * pop.outcome(i, x[i]);
            den += cfg.weight * xt[i] * x[i];
        }
    }
    if den.abs() < 1e-300 {
        return Err(Error::DegenerateDesign("treatment has no residual variation in any configuration".into()));
    }
    Ok(num / den)
}

/// `Σ_i E[Y_i (X_i − X̄_g)] / Σ_i E[X_i (X_i − X̄_g)]`, the limit of the
/// one-way (G) fixed-effects estimator.
pub fn owfe_estimand_enumerated(pop: &PotentialOutcomes, clusters: &ClusterIndex, rule: ProductRule) -> Result<f64> {
    let g = clusters.labels(Dim::G).to_vec();
    let ng = clusters.count(Dim::G);
    ratio_estimand(pop, clusters, rule, |x| {
        let mut sums = vec![0.0; ng];
        let mut counts = vec![0.0; ng];
        for (i, &gi) in g.iter().enumerate() {
            sums[gi] += x[i];
            counts[gi] += 1.0;
        }
        DVector::from_iterator(x.len(), (0..x.len()).map(|i| x[i] - sums[g[i]] / counts[g[i]]))
    })
}

/// `Σ_i E[X̃_i Y_i] / Σ_i E[X̃_i X_i]` with `X̃` the two-way residualized
/// treatment, the limit of the two-way fixed-effects estimator.
pub fn twfe_estimand_enumerated(pop: &PotentialOutcomes, clusters: &ClusterIndex, rule: ProductRule) -> Result<f64> {
    ratio_estimand(pop, clusters, rule, |x| twfe_residualize(x, clusters).values)
}

/// Counterexample population on which the CGM estimand is below the true
/// variance.
///
/// `g` (even) clusters on each dimension. Units sit only in intersections
/// `(k, k)`, `(k, k±1)` and `(k±1, k)` for odd `k` (cyclic indices):
/// `4·g0` units with effect `+1` on the diagonal and `g0` units with effect
/// `−1` in each neighbouring cell. Outcomes are `y(0) = 0`,
/// `y(1) = τ_i − τ̄`, analysed by difference in means.
pub fn counterexample_population(g: usize, g0: usize) -> Result<(PotentialOutcomes, ClusterIndex)> {
    if g < 4 || g % 2 != 0 || g0 == 0 {
        return Err(Error::Input(format!("counterexample needs even g ≥ 4 and g0 ≥ 1, got ({g}, {g0})")));
    }
    let mut gl = Vec::new();
    let mut hl = Vec::new();
    let mut tau = Vec::new();
    let mut push = |a: usize, b: usize, count: usize, t: f64| {
        for _ in 0..count {
            gl.push(a);
            hl.push(b);
            tau.push(t);
        }
    };
    for k in (1..g).step_by(2) {
        push(k, k, 4 * g0, 1.0);
        push(k, (k + 1) % g, g0, -1.0);
        push(k, (k + g - 1) % g, g0, -1.0);
        push((k + 1) % g, k, g0, -1.0);
        push((k + g - 1) % g, k, g0, -1.0);
    }
    let n = tau.len();
    let mean = tau.iter().sum::<f64>() / n as f64;
    let pop = PotentialOutcomes {
        model: UnitModel::Linear,
        y0: DVector::zeros(n),
        y1: DVector::from_iterator(n, tau.iter().map(|t| t - mean)),
        controls: DMatrix::zeros(n, 0),
    };
    Ok((pop, ClusterIndex::from_ids(&gl, &hl)?))
}

/// `(1/M) Σ_i Σ_{j ∈ N_i} (τ_i − τ̄)(τ_j − τ̄)`, where `N_i` is every unit
/// sharing a G or H cluster with `i` (including `i`).
pub fn neighbourhood_effect_sum(pop: &PotentialOutcomes, clusters: &ClusterIndex) -> f64 {
    let g = clusters.labels(Dim::G);
    let h = clusters.labels(Dim::H);
    let dev = &pop.y1 - &pop.y0;
    let dev = dev.add_scalar(-dev.mean());
    let mut total = 0.0;
    for i in 0..pop.units() {
        for j in 0..pop.units() {
            if g[i] == g[j] || h[i] == h[j] {
                total += dev[i] * dev[j];
            }
        }
    }
    total / pop.units() as f64
}
