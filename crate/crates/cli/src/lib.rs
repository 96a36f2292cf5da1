//! Command-line front end: `train`, `check` and `benchmark` subcommands over
//! flat `key = value` run configurations.

pub mod benchmark;
pub mod check;
pub mod config;
pub mod error;
pub mod train;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use newton_forge::parallel::format_table;

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "newton-forge",
    version,
    about = "Train, verify and benchmark feed-forward networks with Newton-CG, SGD and Adam"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train as configured; writes metrics.csv, model.nfm and summary.txt.
    Train {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check gradients, Hessian-vector products and CG against oracles.
    Check {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Perturb one adjoint rule so the gradient check must fail.
        #[arg(long, hide = true)]
        corrupt_adjoint: bool,
    },
    /// Time one epoch per worker count and report parallel efficiency.
    Benchmark {
        #[arg(required_unless_present = "times")]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Format recorded timings instead of running, e.g. `1=104,2=60,4=36`.
        #[arg(long)]
        times: Option<String>,
    },
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed_init: Option<u64>,
    #[arg(long)]
    pub seed_shuffle: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Visit samples in file order every epoch.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) -> Result<(), CliError> {
        if let Some(s) = self.seed_init {
            config.seed_init = s;
        }
        if let Some(s) = self.seed_shuffle {
            config.seed_shuffle = s;
        }
        if let Some(k) = self.workers {
            config.workers = k;
        }
        if self.no_shuffle {
            config.shuffle = false;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        config.validate()
    }
}

fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(path)?;
    overrides.apply(&mut config)?;
    Ok(config)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, overrides } => {
            let config = load(&config, &overrides)?;
            let outcome = train::train(&config)?;
            println!(
                "{}: {} steps, final training loss {}",
                config.scenario, outcome.steps, outcome.final_train_loss
            );
            if let Some(a) = outcome.final_accuracy {
                println!("validation accuracy {a:.4}");
            }
            println!("outputs in {}", config.out_dir.display());
            Ok(())
        }
        Command::Check {
            config,
            overrides,
            corrupt_adjoint,
        } => {
            let config = load(&config, &overrides)?;
            let outcomes = check::check(&config, corrupt_adjoint)?;
            print!("{}", check::format_outcomes(&outcomes));
            let failed: Vec<String> = outcomes
                .iter()
                .filter(|o| !o.passed)
                .map(|o| o.name.to_string())
                .collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::CheckFailed(failed))
            }
        }
        Command::Benchmark {
            config,
            overrides,
            times,
        } => {
            if let Some(times) = times {
                print!("{}", format_table(&benchmark::records_from_times(&times)?));
                return Ok(());
            }
            let path = config.expect("clap requires a config without --times");
            let config = load(&path, &overrides)?;
            let run = benchmark::benchmark(&config)?;
            for w in &run.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", format_table(&run.records));
            println!("wrote {}", config.out_dir.join("scaling.csv").display());
            Ok(())
        }
    }
}
