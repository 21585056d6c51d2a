//! Replication driver: redraws assignment (and optionally sampling) on a
//! fixed population, refits, and summarizes SD, mean SE and coverage per
//! target and variance family.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::ape::{ape_variance, probit_ape_binary};
use crate::data::{Dim, ObservedDataset};
use crate::dgp::enumerate::newton_solve;
use crate::dgp::{
    bernoulli_two_stage_sample, DesignName, Population, PopulationSpec, PotentialOutcomes, SamplingRates, UnitModel,
};
use crate::mestimation::{fit_ols, fit_probit, fit_triple_diff, generic_scores, norm_cdf, ProbitOptions};
use crate::shrinkage::{ape_adjusted_inputs, estimate_family, AdjustmentInputs, ShrinkOptions};
use crate::variance::{critical_value, Family};
use crate::{Error, Result};

/// Largest share of failed replications tolerated before a study fails.
pub const MAX_FAILURE_SHARE: f64 = 0.01;

/// Empty-sample redraws allowed per replication.
const SAMPLING_ATTEMPTS: u64 = 100;

/// Settings of one simulation study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub spec: PopulationSpec,
    pub reps: usize,
    /// First replication index; studies split into ranges reproduce the
    /// single run exactly.
    pub first_rep: u64,
    pub level: f64,
    pub sampling: SamplingRates,
    /// Variance families; `None` uses the design's default list.
    pub families: Option<Vec<Family>>,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl StudyConfig {
    pub fn new(spec: PopulationSpec, reps: usize) -> Self {
        StudyConfig {
            spec,
            reps,
            first_rep: 0,
            level: 0.95,
            sampling: SamplingRates::default(),
            families: None,
            workers: None,
        }
    }

    pub fn families(&self) -> Vec<Family> {
        self.families.clone().unwrap_or_else(|| default_families(self.spec.design))
    }
}

/// Families reported in the published table of each design.
pub fn default_families(design: DesignName) -> Vec<Family> {
    let g1 = Family::AdjOneWay { dim: Dim::G, case: 2 };
    let h1 = Family::AdjOneWay { dim: Dim::H, case: 2 };
    match design {
        DesignName::ProbitOneWay => vec![Family::Ehw, Family::Lz(Dim::G), g1],
        DesignName::ProbitTwoWay => vec![
            Family::Ehw,
            Family::Lz(Dim::G),
            g1,
            Family::Lz(Dim::H),
            h1,
            Family::Cgm,
            Family::AdjCgm,
            Family::Cgm2,
            Family::AdjTwoWay { case: 2 },
        ],
        DesignName::TwoVar1 | DesignName::TwoVar2 => {
            vec![Family::Ehw, Family::Lz(Dim::G), Family::Lz(Dim::H), Family::Cgm, Family::Cgm2]
        }
        DesignName::Tripled1 | DesignName::Tripled2 => vec![
            Family::Ehw,
            Family::Lz(Dim::G),
            Family::Lz(Dim::H),
            Family::Cgm2,
            g1,
            h1,
            Family::AdjTwoWay { case: 2 },
        ],
    }
}

/// Names of the estimated targets of a design.
pub fn target_names(design: DesignName) -> Vec<&'static str> {
    match design {
        DesignName::ProbitOneWay | DesignName::ProbitTwoWay => vec!["coefficient", "ape"],
        DesignName::TwoVar1 | DesignName::TwoVar2 => vec!["x_g", "x_h"],
        DesignName::Tripled1 | DesignName::Tripled2 => vec!["tau"],
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub rep: u64,
    /// Point estimate per target.
    pub estimates: Vec<f64>,
    /// `se[family][target]`.
    pub se: Vec<Vec<f64>>,
    /// Degrees of freedom per family.
    pub dof: Vec<f64>,
    /// Families that produced a nonpositive variance diagonal.
    pub flags: Vec<String>,
}

/// Per-unit probabilities entering the population first-order condition.
fn mixture_mean_score(
    pop: &PotentialOutcomes,
    p_treat: f64,
    theta: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let k = pop.k();
    let mut g = DVector::zeros(k);
    let mut j = DMatrix::zeros(k, k);
    for i in 0..pop.units() {
        for (x, w) in [(1.0, p_treat), (0.0, 1.0 - p_treat)] {
            if w == 0.0 {
                continue;
            }
            let (s, h) = pop.unit_score(i, x, theta);
            g += s * w;
            j += h * w;
        }
    }
    let m = pop.units() as f64;
    (g / m, j / m)
}

/// θ* solving `(1/M) Σ_i E[m_i(θ)] = 0` when each unit is treated with
/// probability `p_treat` and its score depends only on its own treatment.
pub fn mixture_theta_star(pop: &PotentialOutcomes, p_treat: f64) -> Result<DVector<f64>> {
    newton_solve(pop.k(), |t| mixture_mean_score(pop, p_treat, t), 1e-13, 200)
}

/// Probit potential outcomes of a built population.
pub fn probit_potential_outcomes(pop: &crate::dgp::ProbitPopulation) -> PotentialOutcomes {
    let n = pop.clusters.len();
    PotentialOutcomes {
        model: UnitModel::Probit,
        y0: DVector::from_iterator(n, (0..n).map(|i| pop.outcome(i, 0.0))),
        y1: DVector::from_iterator(n, (0..n).map(|i| pop.outcome(i, 1.0))),
        controls: DMatrix::from_column_slice(n, 1, pop.z.as_slice()),
    }
}

/// Population values of every target of the design.
pub fn truth_for(population: &Population) -> Result<Vec<f64>> {
    match population {
        Population::Probit(p) => {
            let po = probit_potential_outcomes(p);
            let theta = mixture_theta_star(&po, p.treatment_probability())?;
            let ape = (0..po.units())
                .map(|i| norm_cdf(po.design_row(i, 1.0).dot(&theta)) - norm_cdf(po.design_row(i, 0.0).dot(&theta)))
                .sum::<f64>()
                / po.units() as f64;
            Ok(vec![theta[1], ape])
        }
        Population::TwoVar(p) => {
            let mut xx = DMatrix::<f64>::zeros(3, 3);
            let mut xy = DVector::<f64>::zeros(3);
            for i in 0..p.tau1.len() {
                for (a, b) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                    let d = DVector::from_vec(vec![1.0, a, b]);
                    let y = p.tau1[i] * a + p.tau2[i] * b + p.e[i];
                    xx += &d * d.transpose() * 0.25;
                    xy += d * (0.25 * y);
                }
            }
            let theta = xx.lu().solve(&xy).ok_or(Error::SingularHessian { condition: f64::INFINITY })?;
            Ok(vec![theta[1], theta[2]])
        }
        Population::Tripled(_) => Ok(vec![0.0]),
    }
}

fn attribute_inputs(data: &ObservedDataset, scores: DMatrix<f64>) -> Result<AdjustmentInputs> {
    AdjustmentInputs::new(scores, &data.z, &data.z_names, &data.clusters, data.meta, ShrinkOptions::default())
}

/// Draws, fits and evaluates every family for replication `rep`.
pub fn run_replication(
    population: &Population,
    sampling: SamplingRates,
    families: &[Family],
    rep: u64,
) -> Result<ReplicationResult> {
    let spec = population.spec();
    let full = population.dataset(&population.draw_assignment(rep))?;
    let data = bernoulli_two_stage_sample(&full, sampling, spec.seed, rep, SAMPLING_ATTEMPTS)?;
    let needs_adjust = families.iter().any(Family::is_adjusted);
    let mut estimates = Vec::new();
    let mut se = vec![Vec::new(); families.len()];
    let mut dof = Vec::with_capacity(families.len());
    let mut flags = Vec::new();
    let mut record = |f: usize, family: Family, report: crate::variance::VarianceReport, picks: &[usize]| {
        if !report.nonpositive.is_empty() {
            flags.push(family.label());
        }
        se[f].extend(picks.iter().map(|&j| report.se[j]));
    };
    match population {
        Population::Probit(_) => {
            let model = fit_probit(&data, true, ProbitOptions::default())?;
            let bundle = generic_scores(&model);
            let ape = probit_ape_binary(&model, &bundle, 1, false)?;
            estimates.push(model.theta_hat[1]);
            estimates.push(ape.gamma_hat[0]);
            let coef_adj = needs_adjust.then(|| attribute_inputs(&data, bundle.scores.clone())).transpose()?;
            let ape_adj = needs_adjust
                .then(|| {
                    ape_adjusted_inputs(&ape.psi, &data.z, &data.z_names, &data.clusters, data.meta, ShrinkOptions::default())
                })
                .transpose()?;
            for (f, &family) in families.iter().enumerate() {
                let coef = estimate_family(family, &bundle.scores, &bundle.hessian_avg, &data.clusters, coef_adj.as_ref())?;
                record(f, family, coef, &[1]);
                let ape_report = ape_variance(&ape, &data.clusters, family, ape_adj.as_ref())?;
                record(f, family, ape_report, &[0]);
                dof.push(family.dof(&data.clusters));
            }
        }
        Population::TwoVar(_) => {
            let model = fit_ols(&data, true)?;
            let bundle = generic_scores(&model);
            estimates.extend([model.theta_hat[1], model.theta_hat[2]]);
            for (f, &family) in families.iter().enumerate() {
                let report = estimate_family(family, &bundle.scores, &bundle.hessian_avg, &data.clusters, None)?;
                record(f, family, report, &[1, 2]);
                dof.push(family.dof(&data.clusters));
            }
        }
        Population::Tripled(_) => {
            let model = fit_triple_diff(&data)?;
            let bundle = generic_scores(&model);
            estimates.push(model.theta_hat[0]);
            let adj = needs_adjust.then(|| attribute_inputs(&data, bundle.scores.clone())).transpose()?;
            for (f, &family) in families.iter().enumerate() {
                let report = estimate_family(family, &bundle.scores, &bundle.hessian_avg, &data.clusters, adj.as_ref())?;
                record(f, family, report, &[0]);
                dof.push(family.dof(&data.clusters));
            }
        }
    }
    Ok(ReplicationResult { rep, estimates, se, dof, flags })
}

/// Coverage tally of a set of intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CoverageCount {
    pub covered: usize,
    pub nan_se: usize,
    pub total: usize,
}

impl CoverageCount {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            self.covered as f64 / self.total as f64
        }
    }
}

/// Counts intervals `θ̂ ± crit·SE` containing `truth`. NaN standard errors
/// never cover and are tallied separately.
pub fn coverage(estimates: &[f64], ses: &[f64], truth: f64, crits: &[f64]) -> CoverageCount {
    let mut out = CoverageCount { total: estimates.len(), ..Default::default() };
    for ((&est, &se), &crit) in estimates.iter().zip(ses).zip(crits) {
        if se.is_nan() {
            out.nan_se += 1;
        } else if (est - truth).abs() <= crit * se {
            out.covered += 1;
        }
    }
    out
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub target: String,
    pub family: String,
    pub mean_se: f64,
    pub coverage: f64,
    pub sd: f64,
    pub reps: usize,
}

/// Aggregated study output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryTable {
    pub design: String,
    pub seed: u64,
    pub rows: Vec<SummaryRow>,
    pub truth: Vec<f64>,
    pub mean_estimate: Vec<f64>,
    pub rep_count: usize,
    pub failed_reps: usize,
    pub nan_se: BTreeMap<String, usize>,
    pub flagged_reps: BTreeMap<String, usize>,
    pub notes: Vec<String>,
}

impl SummaryTable {
    /// Row for a target and family label (`"oracle"` for the SD row).
    pub fn row(&self, target: &str, family: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.target == target && r.family == family)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Input(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.rows).map_err(|e| Error::Input(e.to_string()))
    }
}

/// Runs replications `first_rep .. first_rep + reps`, in parallel, returning
/// successes (ordered by replication) and the failures.
pub fn run_replications(
    population: &Population,
    config: &StudyConfig,
) -> Result<(Vec<ReplicationResult>, Vec<(u64, Error)>)> {
    let families = config.families();
    let reps: Vec<u64> = (config.first_rep..config.first_rep + config.reps as u64).collect();
    let work = || {
        reps.par_iter()
            .map(|&r| (r, run_replication(population, config.sampling, &families, r)))
            .collect::<Vec<_>>()
    };
    let outcomes = match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Input(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (r, outcome) in outcomes {
        match outcome {
            Ok(res) => ok.push(res),
            Err(e) => {
                log::warn!("replication {r} failed: {e}");
                failed.push((r, e));
            }
        }
    }
    Ok((ok, failed))
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Summarizes replication results against the population truth.
pub fn aggregate(
    design: DesignName,
    seed: u64,
    families: &[Family],
    results: &[ReplicationResult],
    failed: usize,
    truth: &[f64],
    oracle_dof: f64,
    level: f64,
) -> Result<SummaryTable> {
    let mut results: Vec<&ReplicationResult> = results.iter().collect();
    results.sort_by_key(|r| r.rep);
    let targets = target_names(design);
    let n = results.len();
    let mut rows = Vec::new();
    let mut nan_se = BTreeMap::new();
    let mut flagged_reps = BTreeMap::new();
    let mut notes = Vec::new();
    let mut mean_estimate = Vec::new();
    if n < 2 {
        notes.push(format!("{n} successful replication(s): SD and oracle coverage are undefined"));
    }
    let quantile = 0.5 + level / 2.0;
    let oracle_crit = critical_value(oracle_dof, quantile)?;
    for (t, name) in targets.iter().enumerate() {
        let est: Vec<f64> = results.iter().map(|r| r.estimates[t]).collect();
        let sd = sample_sd(&est);
        mean_estimate.push(est.iter().sum::<f64>() / n.max(1) as f64);
        let oracle = coverage(&est, &vec![sd; n], truth[t], &vec![oracle_crit; n]);
        rows.push(SummaryRow {
            target: name.to_string(),
            family: "oracle".into(),
            mean_se: sd,
            coverage: oracle.rate(),
            sd,
            reps: n,
        });
        for (f, family) in families.iter().enumerate() {
            let ses: Vec<f64> = results.iter().map(|r| r.se[f][t]).collect();
            let crits = results
                .iter()
                .map(|r| critical_value(r.dof[f], quantile))
                .collect::<Result<Vec<f64>>>()?;
            let cov = coverage(&est, &ses, truth[t], &crits);
            let finite: Vec<f64> = ses.iter().copied().filter(|s| !s.is_nan()).collect();
            if cov.nan_se > 0 {
                nan_se.insert(format!("{name}/{family}"), cov.nan_se);
            }
            rows.push(SummaryRow {
                target: name.to_string(),
                family: family.label(),
                mean_se: finite.iter().sum::<f64>() / finite.len().max(1) as f64,
                coverage: cov.rate(),
                sd,
                reps: n,
            });
        }
    }
    for r in &results {
        for flag in &r.flags {
            *flagged_reps.entry(flag.clone()).or_insert(0) += 1;
        }
    }
    if failed > 0 {
        notes.push(format!("{failed} replication(s) failed and were excluded"));
    }
    Ok(SummaryTable {
        design: design.to_string(),
        seed,
        rows,
        truth: truth.to_vec(),
        mean_estimate,
        rep_count: n,
        failed_reps: failed,
        nan_se,
        flagged_reps,
        notes,
    })
}

/// Builds the population, runs every replication and summarizes.
pub fn run_study(config: &StudyConfig) -> Result<SummaryTable> {
    if config.reps == 0 {
        return Err(Error::Input("a study needs at least one replication".into()));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::Input(format!("confidence level {} outside (0, 1)", config.level)));
    }
    config.sampling.validate()?;
    let population = Population::build(&config.spec)?;
    let truth = truth_for(&population)?;
    let (ok, failed) = run_replications(&population, config)?;
    if failed.len() as f64 > MAX_FAILURE_SHARE * config.reps as f64 || ok.is_empty() {
        return Err(Error::StudyFailed { failed: failed.len(), reps: config.reps });
    }
    let oracle_dof = Family::Ehw.dof(population.clusters());
    aggregate(
        config.spec.design,
        config.spec.seed,
        &config.families(),
        &ok,
        failed.len(),
        &truth,
        oracle_dof,
        config.level,
    )
}
