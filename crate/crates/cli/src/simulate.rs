//! `simulate`: run a study on a built-in design.

use std::fmt::Write as _;

use fpcr::dgp::{DesignName, PopulationSpec, SamplingRates};
use fpcr::montecarlo::{target_names, StudyConfig, SummaryTable};
use fpcr::variance::Family;

use crate::args::SimulateArgs;
use crate::Failure;

/// Validated study configuration.
pub fn config(args: &SimulateArgs) -> Result<StudyConfig, Failure> {
    let usage = |m: String| Failure::Usage(m);
    let design = DesignName::parse(args.design.as_deref().ok_or_else(|| usage("--design is required".into()))?)
        .map_err(|e| usage(e.to_string()))?;
    let seed = args
        .seed
        .ok_or_else(|| usage("--seed is required: every draw of a study derives from it".into()))?;
    let reps = args.reps.ok_or_else(|| usage("--reps is required".into()))?;
    let mut spec = PopulationSpec::paper(design, seed);
    if let Some(g) = args.g {
        spec.g = g;
    }
    if let Some(h) = args.h {
        spec.h = h;
    }
    if let Some(k) = args.units_per_cell {
        spec.units_per_cell = k;
    }
    if let Some(sd) = args.noise_sd {
        spec.noise_sd = sd;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let defaults = SamplingRates::default();
    let sampling = SamplingRates {
        rho_g: args.rho_g.unwrap_or(defaults.rho_g),
        rho_h: args.rho_h.unwrap_or(defaults.rho_h),
        rho_u: args.rho_u.unwrap_or(defaults.rho_u),
    };
    sampling.validate().map_err(|e| usage(e.to_string()))?;
    let families = args
        .family
        .as_ref()
        .map(|labels| {
            labels
                .iter()
                .map(|l| Family::parse(l.trim(), args.case).map_err(|e| usage(e.to_string())))
                .collect::<Result<Vec<_>, _>>()
        })
        .transpose()?;
    if args.workers == Some(0) {
        return Err(usage("--workers must be positive".into()));
    }
    let mut config = StudyConfig::new(spec, reps);
    config.first_rep = args.first_rep.unwrap_or(0);
    config.level = args.level.unwrap_or(0.95);
    config.sampling = sampling;
    config.families = families;
    config.workers = args.workers;
    Ok(config)
}

/// Plain-text rendering of a study table.
pub fn summary(table: &SummaryTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "design {}  seed {}  replications {}", table.design, table.seed, table.rep_count);
    if table.failed_reps > 0 {
        let _ = writeln!(out, "failed replications: {}", table.failed_reps);
    }
    let _ = writeln!(out, "{:<12} {:<18} {:>10} {:>10} {:>10}", "target", "family", "mean_se", "coverage", "sd");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{:<12} {:<18} {:>10.4} {:>10.3} {:>10.4}",
            r.target, r.family, r.mean_se, r.coverage, r.sd
        );
    }
    if let Ok(design) = DesignName::parse(&table.design) {
        for ((name, truth), mean) in target_names(design).iter().zip(&table.truth).zip(&table.mean_estimate) {
            let _ = writeln!(out, "{name}: truth {truth:.6}, mean estimate {mean:.6}");
        }
    }
    for (family, count) in &table.flagged_reps {
        let _ = writeln!(out, "{family}: {count} replications with a nonpositive variance");
    }
    for note in &table.notes {
        let _ = writeln!(out, "note: {note}");
    }
    out
}
