//! `fpcr` command-line tool.
//!
//! Exit codes: 0 on success, 1 when estimation or simulation fails, 2 on
//! usage, configuration or input errors.

mod args;
mod estimate;
mod input;
mod simulate;

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use args::{Cli, Command, Format};

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Fit(fpcr::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Fit(_) => 1,
            Failure::Usage(_) | Failure::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(m) => write!(f, "input error: {m}"),
            Failure::Fit(e) => write!(f, "{e}"),
        }
    }
}

fn render<T: Serialize>(rows: &[T], format: Format) -> Result<String, Failure> {
    let io = |e: String| Failure::Data(format!("cannot serialize output: {e}"));
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(|e| io(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| io(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| io(e.to_string()))
        }
        Format::Json => serde_json::to_string_pretty(rows).map_err(|e| io(e.to_string())),
    }
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), Failure> {
    match output {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Data(format!("cannot write to stdout: {e}"))),
    }
}

fn run_estimate(args: args::EstimateArgs) -> Result<(), Failure> {
    let args = args.resolve().map_err(Failure::Usage)?;
    let req = estimate::request(&args)?;
    let path = args.data.as_deref().ok_or_else(|| Failure::Usage("--data is required".into()))?;
    let table = input::Table::read(path).map_err(Failure::Data)?;
    let (data, attr, attr_names) = estimate::load(&args, &table)?;
    let rows = estimate::run(&req, &data, &attr, &attr_names).map_err(Failure::Fit)?;
    for r in rows.iter().filter(|r| !r.flags.is_empty() || !r.notes.is_empty()) {
        log::warn!("{} {}: {} {}", r.target, r.family, r.flags, r.notes);
    }
    emit(&render(&rows, args.format.unwrap_or_default())?, args.output.as_deref())
}

fn run_simulate(args: args::SimulateArgs) -> Result<(), Failure> {
    let args = args.resolve().map_err(Failure::Usage)?;
    let config = simulate::config(&args)?;
    let table = fpcr::montecarlo::run_study(&config).map_err(Failure::Fit)?;
    let text = match args.format.unwrap_or_default() {
        Format::Csv => table.to_csv(),
        Format::Json => table.to_json(),
    }
    .map_err(Failure::Fit)?;
    emit(&text, args.output.as_deref())?;
    let summary = simulate::summary(&table);
    if args.output.is_some() {
        print!("{summary}");
    } else {
        eprint!("{summary}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(a) => run_estimate(a),
        Command::Simulate(a) => run_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
