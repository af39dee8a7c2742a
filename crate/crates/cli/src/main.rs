//! `fbkit` command-line front end.
//!
//! Exit codes: 0 on success, 1 on a config or runtime error, 2 when a run diverged.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Config;
use crate::output::OutDir;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(String),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Run(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fbkit", version, about = "Inertial forward-backward solvers with local rate prediction")]
struct Cli {
    /// JSON config document.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "fbkit-out")]
    out: PathBuf,
    /// Overrides the seed of the generated instance.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Uses a shipped preset as the problem.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured schedules and write traces and a summary.
    Solve,
    /// Restricted spectrum, rate report, rate curve and convergence regions.
    Rates,
    /// Convergence-region grids only.
    Region,
    /// Compare the standard methods on an instance against the predicted rates.
    Experiment {
        /// Print the shipped presets and exit.
        #[arg(long)]
        list_presets: bool,
    },
    /// Identification bounds, best rates and measurement bound.
    Bounds,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("FBKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("FBKIT_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Run(e.to_string()))
}

fn run(cli: Cli) -> Result<commands::Outcome, CliError> {
    if let Command::Experiment { list_presets: true } = cli.command {
        print!("{}", commands::list_presets());
        return Ok(commands::Outcome::default());
    }
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    cfg.apply_overrides(cli.preset.as_deref(), cli.seed)?;
    let mut out = OutDir::create(&cli.out)?;
    let outcome = match cli.command {
        Command::Solve => commands::solve(&mut cfg, &mut out)?,
        Command::Rates => commands::rates_cmd(&mut cfg, &mut out)?,
        Command::Region => commands::region(&mut cfg, &mut out)?,
        Command::Experiment { .. } => commands::experiment(&mut cfg, &mut out)?,
        Command::Bounds => commands::bounds(&mut cfg, &mut out)?,
    };
    // every default the command relied on is filled in by now
    out.write_json("effective_config.json", &cfg)?;
    for p in out.written() {
        eprintln!("wrote {}", p.display());
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(o) if o.diverged => {
            eprintln!("a run diverged");
            ExitCode::from(2)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
