//! Command-line arguments and their config-file counterparts.
//!
//! Every flag of a subcommand can also be given as a kebab-case key in a TOML
//! file passed with `--config`. Flags on the command line win over the file.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "fpcr", version, about = "Design-based cluster-robust standard errors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model on CSV data and report standard errors per variance family.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study on one of the built-in designs.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EstimateArgs {
    /// TOML file with the same keys as the flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// ols, probit, diff-in-means, owfe, twfe or tripled.
    #[arg(long)]
    pub model: Option<String>,
    /// Outcome column.
    #[arg(long)]
    pub y: Option<String>,
    /// Assignment columns; the first is the treatment for the fixed-effects models.
    #[arg(long, value_delimiter = ',')]
    pub x: Option<Vec<String>>,
    /// Fixed attribute columns, used as controls and as shrinkage attributes.
    #[arg(long, value_delimiter = ',')]
    pub z: Option<Vec<String>>,
    /// Shrinkage attributes when they differ from `--z`.
    #[arg(long, value_delimiter = ',')]
    pub attributes: Option<Vec<String>>,
    #[arg(long)]
    pub cluster_g: Option<String>,
    #[arg(long)]
    pub cluster_h: Option<String>,
    /// Integer period column (triple differences).
    #[arg(long)]
    pub period: Option<String>,
    /// Cluster dimension of the one-way fixed effects: g or h.
    #[arg(long)]
    pub fe_dim: Option<String>,
    /// Variance families, e.g. ehw,lz-g,cgm,adj-oneway-g.
    #[arg(long, value_delimiter = ',')]
    pub family: Option<Vec<String>>,
    /// Case of the adjusted families.
    #[arg(long)]
    pub case: Option<u8>,
    /// Population size M.
    #[arg(long)]
    pub population_size: Option<usize>,
    /// Total number of G clusters in the population.
    #[arg(long)]
    pub total_g: Option<usize>,
    /// Total number of H clusters in the population.
    #[arg(long)]
    pub total_h: Option<usize>,
    /// Also report the average partial effect of the first assignment column (probit).
    #[arg(long)]
    #[serde(default)]
    pub ape: bool,
    #[arg(long)]
    #[serde(default)]
    pub no_intercept: bool,
    /// Leave the constant out of the shrinkage attributes.
    #[arg(long)]
    #[serde(default)]
    pub no_attribute_intercept: bool,
    /// Fail on collinear attributes instead of dropping them.
    #[arg(long)]
    #[serde(default)]
    pub strict_attributes: bool,
    /// Two-way assignment combined with sampling.
    #[arg(long)]
    #[serde(default)]
    pub sampled_two_way: bool,
    /// Confidence level of the reported intervals.
    #[arg(long)]
    pub level: Option<f64>,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// probit-oneway, probit-twoway, twovar-1, twovar-2, tripled-1 or tripled-2.
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Required: every random draw derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// First replication index, for splitting a study into ranges.
    #[arg(long)]
    pub first_rep: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    /// Variance families; the design's published list when absent.
    #[arg(long, value_delimiter = ',')]
    pub family: Option<Vec<String>>,
    #[arg(long)]
    pub case: Option<u8>,
    /// Number of G clusters.
    #[arg(long)]
    pub g: Option<usize>,
    /// Number of H clusters.
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long)]
    pub units_per_cell: Option<usize>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Sampling probability of G clusters.
    #[arg(long)]
    pub rho_g: Option<f64>,
    #[arg(long)]
    pub rho_h: Option<f64>,
    /// Sampling probability of units within sampled cells.
    #[arg(long)]
    pub rho_u: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
}

/// Paths in a config file are relative to the file.
fn rebase(path: Option<PathBuf>, config: &Path) -> Option<PathBuf> {
    path.map(|p| match config.parent() {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    })
}

macro_rules! overlay {
    ($cli:ident, $file:ident; $($opt:ident),*; $($flag:ident),*) => {
        $( $cli.$opt = $cli.$opt.or($file.$opt); )*
        $( $cli.$flag = $cli.$flag || $file.$flag; )*
    };
}

impl EstimateArgs {
    /// Command-line values overlaid on the config file, if any.
    pub fn resolve(mut self) -> Result<Self, String> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let mut file: EstimateArgs = read_config(&path)?;
        file.data = rebase(file.data, &path);
        file.output = rebase(file.output, &path);
        overlay!(self, file;
            data, model, y, x, z, attributes, cluster_g, cluster_h, period, fe_dim, family, case,
            population_size, total_g, total_h, level, output, format;
            ape, no_intercept, no_attribute_intercept, strict_attributes, sampled_two_way);
        Ok(self)
    }
}

impl SimulateArgs {
    pub fn resolve(mut self) -> Result<Self, String> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let mut file: SimulateArgs = read_config(&path)?;
        file.output = rebase(file.output, &path);
        overlay!(self, file;
            design, reps, seed, first_rep, workers, level, family, case, g, h, units_per_cell, noise_sd,
            rho_g, rho_h, rho_u, output, format;);
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<SimulateArgs>("design = \"twovar-1\"\nsede = 3\n").unwrap_err();
        assert!(err.to_string().contains("sede"));
    }

    #[test]
    fn command_line_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "design = \"twovar-1\"\nseed = 3\nreps = 10\nfamily = [\"ehw\", \"cgm\"]\n").unwrap();
        let cli = SimulateArgs {
            config: Some(path),
            seed: Some(9),
            ..Default::default()
        };
        let args = cli.resolve().unwrap();
        assert_eq!(args.seed, Some(9));
        assert_eq!(args.reps, Some(10));
        assert_eq!(args.family.unwrap(), vec!["ehw", "cgm"]);
    }
}
