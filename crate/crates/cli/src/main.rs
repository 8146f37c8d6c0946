use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gridless_core::harness::{emit_plot, run_experiment, EstimatorKind, ExperimentConfig};
use gridless_core::selftest;

#[derive(Parser)]
#[command(name = "gridless", version, about = "Gridless channel estimation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo NMSE sweep and write the result table.
    Simulate(SimulateArgs),
    /// Check analytic derivatives and fast operators against reference oracles.
    Selftest {
        /// Random cases per check family.
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// TOML experiment file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the scaled-down desk configuration instead of the full one.
    #[arg(long)]
    desk: bool,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    bits: Option<Vec<u32>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of nfcfgs_cv, ongrid_fcfgs_cv, oracle_stop.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Record wall-clock runtime per row (makes the output run-dependent).
    #[arg(long)]
    timing: bool,
    /// Add rows to an existing file written with the same configuration.
    #[arg(long)]
    append: bool,
}

impl SimulateArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None if self.desk => ExperimentConfig::desk(),
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.snr_db {
            cfg.snr_db = v.clone();
        }
        if let Some(v) = &self.bits {
            cfg.bits = v.clone();
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(names) = &self.estimators {
            cfg.estimators = names
                .iter()
                .map(|n| n.parse::<EstimatorKind>())
                .collect::<Result<_, _>>()?;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if self.plot.is_some() {
            cfg.plot = self.plot.clone();
        }
        cfg.record_runtime |= self.timing;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = args.resolve()?;
    log::info!(
        "{} trials x {} SNR points x {} bit depths x {} estimators",
        cfg.trials,
        cfg.snr_db.len(),
        cfg.bits.len(),
        cfg.estimators.len()
    );
    let table = run_experiment(&cfg)?;
    let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} estimator runs failed and carry NaN NMSE");
    }
    match &cfg.out {
        Some(path) => table
            .write_csv(path, args.append)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{}", table.to_csv()?),
    }
    if let Some(path) = &cfg.plot {
        emit_plot(&table, path).with_context(|| format!("plotting to {}", path.display()))?;
    }
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => simulate(&args),
        Command::Selftest { instances, seed } => {
            let checks = selftest::run_all(instances, seed)?;
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                bail!("{failed} self-check families failed");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
