//! `estimate`: fit a model on CSV data and report every requested family.

use fpcr::ape::{ape_variance, probit_ape_binary};
use fpcr::data::{ClusterIndex, Dim, ObservedDataset, PopulationMeta};
use fpcr::mestimation::{
    fit_diff_in_means, fit_ols, fit_one_way_fe, fit_probit, fit_triple_diff, fit_twfe, generic_scores, FittedModel,
    ProbitOptions,
};
use fpcr::shrinkage::{estimate_family, AdjustmentInputs, ShrinkOptions};
use fpcr::variance::{critical_value, Family, VarianceReport};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::args::EstimateArgs;
use crate::input::Table;
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Ols,
    Probit,
    DiffInMeans,
    OneWayFe(Dim),
    TwoWayFe,
    TripleDiff,
}

/// One line of the report: a target under one variance family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub target: String,
    pub family: String,
    pub estimate: f64,
    pub se: f64,
    pub dof: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub n: usize,
    pub flags: String,
    pub notes: String,
}

/// Validated estimation request.
#[derive(Debug, Clone)]
pub struct Request {
    pub model: Model,
    pub families: Vec<Family>,
    pub level: f64,
    pub ape: bool,
    pub intercept: bool,
    pub shrink: ShrinkOptions,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_model(name: &str, fe_dim: Option<&str>) -> Result<Model, Failure> {
    let dim = match fe_dim.unwrap_or("g") {
        "g" => Dim::G,
        "h" => Dim::H,
        other => return Err(usage(format!("fe-dim must be g or h, got '{other}'"))),
    };
    Ok(match name {
        "ols" => Model::Ols,
        "probit" => Model::Probit,
        "diff-in-means" => Model::DiffInMeans,
        "owfe" => Model::OneWayFe(dim),
        "twfe" => Model::TwoWayFe,
        "tripled" => Model::TripleDiff,
        other => {
            return Err(usage(format!(
                "unknown model '{other}' (expected ols, probit, diff-in-means, owfe, twfe or tripled)"
            )))
        }
    })
}

/// Checks the arguments before any data is read.
pub fn request(args: &EstimateArgs) -> Result<Request, Failure> {
    let model = parse_model(
        args.model.as_deref().ok_or_else(|| usage("--model is required"))?,
        args.fe_dim.as_deref(),
    )?;
    let labels = args.family.clone().unwrap_or_else(|| vec!["ehw".into()]);
    let families = labels
        .iter()
        .map(|l| Family::parse(l.trim(), args.case).map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let level = args.level.unwrap_or(0.95);
    if !(level > 0.0 && level < 1.0) {
        return Err(usage(format!("level must lie in (0, 1), got {level}")));
    }
    if args.ape && model != Model::Probit {
        return Err(usage("--ape needs --model probit"));
    }
    if args.y.is_none() || args.x.as_ref().is_none_or(Vec::is_empty) {
        return Err(usage("--y and --x are required"));
    }
    if args.cluster_g.is_none() {
        return Err(usage("--cluster-g is required"));
    }
    if model == Model::TripleDiff && args.period.is_none() {
        return Err(usage("--model tripled needs --period"));
    }
    if families.iter().any(Family::is_two_way) && args.cluster_h.is_none() {
        return Err(usage("two-way families need --cluster-h"));
    }
    Ok(Request {
        model,
        families,
        level,
        ape: args.ape,
        intercept: !args.no_intercept,
        shrink: ShrinkOptions {
            intercept: !args.no_attribute_intercept,
            strict: args.strict_attributes,
            sampled_two_way: args.sampled_two_way,
        },
    })
}

/// Dataset and shrinkage attributes read from the CSV.
pub fn load(args: &EstimateArgs, table: &Table) -> Result<(ObservedDataset, DMatrix<f64>, Vec<String>), Failure> {
    let y = table.numeric(args.y.as_deref().unwrap_or_default()).map_err(Failure::Data)?;
    let x_names = args.x.clone().unwrap_or_default();
    let z_names = args.z.clone().unwrap_or_default();
    let x = table.matrix(&x_names).map_err(Failure::Data)?;
    let z = table.matrix(&z_names).map_err(Failure::Data)?;
    let g = table.labels(args.cluster_g.as_deref().unwrap_or_default()).map_err(Failure::Data)?;
    let h = args.cluster_h.as_deref().map(|c| table.labels(c)).transpose().map_err(Failure::Data)?;
    let clusters = ClusterIndex::canonicalize(&g, h.as_deref()).map_err(Failure::Fit)?;
    let meta = PopulationMeta {
        population_size: args.population_size,
        total_g: args.total_g,
        total_h: args.total_h,
    };
    let mut data = ObservedDataset::new(y, x, z, clusters, meta)
        .map_err(|e| Failure::Data(e.to_string()))?
        .with_names(x_names, z_names.clone());
    if let Some(p) = &args.period {
        data = data.with_period(table.integer(p).map_err(Failure::Data)?);
    }
    let (attr, attr_names) = match &args.attributes {
        Some(names) => (table.matrix(names).map_err(Failure::Data)?, names.clone()),
        None => (data.z.clone(), z_names),
    };
    Ok((data, attr, attr_names))
}

fn fit(model: Model, data: &ObservedDataset, intercept: bool) -> fpcr::Result<(FittedModel, Vec<usize>)> {
    let lead = usize::from(intercept);
    let xs = data.x.ncols();
    match model {
        Model::Ols => Ok((fit_ols(data, intercept)?, (lead..lead + xs).collect())),
        Model::Probit => Ok((fit_probit(data, intercept, ProbitOptions::default())?, (lead..lead + xs).collect())),
        Model::DiffInMeans => {
            if xs != 1 {
                return Err(fpcr::Error::Input("difference in means takes exactly one assignment column".into()));
            }
            let mut m = fit_diff_in_means(&data.y, &data.x.column(0).into_owned())?;
            m.names[1] = data.x_names[0].clone();
            Ok((m, vec![1]))
        }
        Model::OneWayFe(dim) => Ok((fit_one_way_fe(data, 0, dim)?, vec![0])),
        Model::TwoWayFe => Ok((fit_twfe(data, 0)?, vec![0])),
        Model::TripleDiff => Ok((fit_triple_diff(data)?, vec![0])),
    }
}

fn row(
    target: &str,
    estimate: f64,
    report: &VarianceReport,
    j: usize,
    level: f64,
    extra_notes: &[String],
) -> fpcr::Result<EstimateRow> {
    let se = report.se[j];
    let half = critical_value(report.dof, 0.5 + level / 2.0)? * se;
    let mut flags = Vec::new();
    if report.nonpositive.contains(&j) {
        flags.push(if report.v[(j, j)] < 0.0 { "negative-variance" } else { "zero-variance" });
    }
    let notes: Vec<&str> = report.notes.iter().chain(extra_notes).map(String::as_str).collect();
    Ok(EstimateRow {
        target: target.to_string(),
        family: report.family.label(),
        estimate,
        se,
        dof: report.dof,
        ci_lower: estimate - half,
        ci_upper: estimate + half,
        n: report.n,
        flags: flags.join(";"),
        notes: notes.join("; "),
    })
}

/// Fits the model and evaluates every family.
pub fn run(req: &Request, data: &ObservedDataset, attr: &DMatrix<f64>, attr_names: &[String]) -> fpcr::Result<Vec<EstimateRow>> {
    let (model, targets) = fit(req.model, data, req.intercept)?;
    let bundle = generic_scores(&model);
    let adjusted = req.families.iter().any(Family::is_adjusted);
    let inputs = |scores: DMatrix<f64>| {
        AdjustmentInputs::new(scores, attr, attr_names, &data.clusters, data.meta, req.shrink)
    };
    let adjust = adjusted.then(|| inputs(bundle.scores.clone())).transpose()?;
    let mut rows = Vec::new();
    for &family in &req.families {
        let report = estimate_family(family, &bundle.scores, &bundle.hessian_avg, &data.clusters, adjust.as_ref())?;
        for &j in &targets {
            rows.push(row(&model.names[j], model.theta_hat[j], &report, j, req.level, &model.notes)?);
        }
    }
    if req.ape {
        let treatment = targets[0];
        if model.design().column(treatment).iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(fpcr::Error::Input("the average partial effect needs a 0/1 first assignment column".into()));
        }
        let ape = probit_ape_binary(&model, &bundle, treatment, false)?;
        let ape_adjust = adjusted.then(|| inputs(ape.psi.clone())).transpose()?;
        let name = format!("ape({})", model.names[treatment]);
        for &family in &req.families {
            let report = ape_variance(&ape, &data.clusters, family, ape_adjust.as_ref())?;
            rows.push(row(&name, ape.gamma_hat[0], &report, 0, req.level, &model.notes)?);
        }
    }
    Ok(rows)
}
