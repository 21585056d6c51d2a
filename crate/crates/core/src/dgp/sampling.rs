//! Two-stage Bernoulli sampling: clusters on each dimension enter with
//! probabilities ρ_g and ρ_h, then units in selected cells with ρ_u.

use nalgebra::{DMatrix, DVector};

use super::rng::{bernoulli, substream, Purpose};
use crate::data::{Dim, ObservedDataset, PopulationMeta};
use crate::{Error, Result};

/// Sampling probabilities; `1.0` everywhere observes the whole population.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingRates {
    #[serde(default = "one")]
    pub rho_g: f64,
    #[serde(default = "one")]
    pub rho_h: f64,
    #[serde(default = "one")]
    pub rho_u: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for SamplingRates {
    fn default() -> Self {
        SamplingRates { rho_g: 1.0, rho_h: 1.0, rho_u: 1.0 }
    }
}

impl SamplingRates {
    pub fn validate(&self) -> Result<()> {
        for p in [self.rho_g, self.rho_h, self.rho_u] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Input(format!("sampling probability {p} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_population(&self) -> bool {
        self.rho_g == 1.0 && self.rho_h == 1.0 && self.rho_u == 1.0
    }
}

/// Rows of the population selected in one draw.
pub fn sample_rows(data: &ObservedDataset, rates: SamplingRates, seed: u64, rep: u64, attempt: u64) -> Vec<usize> {
    let g = data.clusters.labels(Dim::G);
    let h = data.clusters.labels(Dim::H);
    let mut rng = substream(seed, rep.wrapping_add(attempt << 48), Purpose::Sampling);
    let keep_g: Vec<bool> = (0..data.clusters.count(Dim::G)).map(|_| bernoulli(&mut rng, rates.rho_g)).collect();
    let keep_h: Vec<bool> = (0..data.clusters.count(Dim::H)).map(|_| bernoulli(&mut rng, rates.rho_h)).collect();
    (0..data.n())
        .filter(|&i| {
            let unit = bernoulli(&mut rng, rates.rho_u);
            keep_g[g[i]] && keep_h[h[i]] && unit
        })
        .collect()
}

/// Restricts a dataset to `rows`, keeping the population metadata of the
/// full dataset.
pub fn restrict(data: &ObservedDataset, rows: &[usize]) -> Result<ObservedDataset> {
    if rows.is_empty() {
        return Err(Error::EmptySample);
    }
    let pick = |m: &DMatrix<f64>| DMatrix::from_fn(rows.len(), m.ncols(), |r, j| m[(rows[r], j)]);
    let meta = PopulationMeta {
        population_size: Some(data.population_size()),
        total_g: Some(data.total_clusters(Dim::G)),
        total_h: Some(data.total_clusters(Dim::H)),
    };
    let out = ObservedDataset::new(
        DVector::from_iterator(rows.len(), rows.iter().map(|&i| data.y[i])),
        pick(&data.x),
        pick(&data.z),
        data.clusters.subset(rows),
        meta,
    )?
    .with_names(data.x_names.clone(), data.z_names.clone());
    Ok(match &data.period {
        Some(p) => out.with_period(rows.iter().map(|&i| p[i]).collect()),
        None => out,
    })
}

/// Draws a two-stage Bernoulli sample, redrawing up to `max_attempts`
/// times when the sample comes out empty.
pub fn bernoulli_two_stage_sample(
    data: &ObservedDataset,
    rates: SamplingRates,
    seed: u64,
    rep: u64,
    max_attempts: u64,
) -> Result<ObservedDataset> {
    rates.validate()?;
    if rates.is_population() {
        return Ok(data.clone());
    }
    for attempt in 0..max_attempts.max(1) {
        let rows = sample_rows(data, rates, seed, rep, attempt);
        if !rows.is_empty() {
            return restrict(data, &rows);
        }
    }
    Err(Error::EmptySample)
}
