//! `condopt`: solve, verify, share and randomset on finite scenario trees.
//!
//! Exit codes: 0 success, 1 a check failed, 2 configuration or I/O error,
//! 3 infeasible or divergent problem.

mod output;
mod randomset;
mod share;
mod solve;
mod verify;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use condopt::config::{ProblemConfig, SharingConfig};
use condopt::Error;

#[derive(Parser)]
#[command(name = "condopt", version, about = "Stochastic optimal control on finite scenario trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a control problem and write value, policy and trajectory CSVs.
    Solve {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Check generator, control-set and risk conditions and compare the
    /// solver against exhaustive search on a shrunk instance.
    Verify {
        #[command(flatten)]
        input: Input,
        /// Also write the report to DIR/verify.txt.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Closed-form risk sharing with a lattice cross-check.
    Share {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Random closed set / stable set reciprocality suites.
    Randomset {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random instances on top of the exhaustive sweep.
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Also write the report to DIR/randomset.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Input {
    /// JSON problem file.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in problem instead of a file.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct Tuning {
    #[arg(long)]
    seed: Option<u64>,
    /// Solver threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    control_res: Option<f64>,
}

impl Input {
    fn text(&self) -> Result<Option<String>> {
        match &self.config {
            Some(path) => fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))
                .map(Some),
            None => Ok(None),
        }
    }

    fn problem(&self, tuning: &Tuning) -> Result<ProblemConfig> {
        let mut cfg = match (self.text()?, &self.preset) {
            (Some(text), _) => ProblemConfig::from_json(&text)?,
            (None, Some(name)) => ProblemConfig::preset(name)?,
            (None, None) => unreachable!("clap requires --config or --preset"),
        };
        if let Some(seed) = tuning.seed {
            cfg.seed = seed;
        }
        if let Some(n) = tuning.grid_points {
            cfg.solver.state_points = n;
        }
        if let Some(h) = tuning.control_res {
            cfg.solver.control_resolution = h;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn sharing(&self, seed: Option<u64>) -> Result<SharingConfig> {
        let mut cfg = match (self.text()?, &self.preset) {
            (Some(text), _) => SharingConfig::from_json(&text)?,
            (None, Some(name)) => SharingConfig::preset(name)?,
            (None, None) => unreachable!("clap requires --config or --preset"),
        };
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Infeasible { .. }
            | Error::Divergence { .. }
            | Error::NoK(_)
            | Error::EmptyControlSet { .. }
            | Error::Unbounded { .. }
            | Error::OutsideGrid { .. }
            | Error::NonFinite { .. },
        ) => 3,
        _ => 2,
    }
}

/// `Ok(false)` means a check failed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve { input, out, tuning } => {
            let cfg = input.problem(&tuning)?;
            solve::run(&cfg, &out, tuning.workers)?;
            Ok(true)
        }
        Command::Verify { input, out, tuning } => {
            let cfg = input.problem(&tuning)?;
            verify::run(&cfg, out.as_deref(), tuning.workers)
        }
        Command::Share { input, out, seed } => share::run(&input.sharing(seed)?, &out),
        Command::Randomset { seed, instances, out } => randomset::run(seed, instances, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
