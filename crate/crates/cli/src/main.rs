//! `atdlab` command-line driver.

mod analyze;
mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Context;
use crate::config::{load_config, CliError, LoadedConfig};

/// Environment variable naming the rollout cache directory.
const CACHE_ENV: &str = "ATDLAB_CACHE_DIR";

#[derive(Parser)]
#[command(name = "atdlab", version, about = "Policy-evaluation experiments with ATD and its baselines")]
struct Cli {
    /// Worker threads for runs and rollouts (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Added to every run seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    /// Where CSV and JSON artifacts go (default: the config's output_dir, else ./results).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Rollout cache directory (default: $ATDLAB_CACHE_DIR, else ./.atdlab-cache).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (JSON).
    #[arg(long = "config", value_name = "PATH")]
    flag: Option<PathBuf>,
    /// Experiment config (JSON), positional form.
    #[arg(value_name = "CONFIG", conflicts_with = "flag")]
    positional: Option<PathBuf>,
}

impl ConfigArg {
    fn path(&self) -> Result<PathBuf, CliError> {
        self.flag
            .clone()
            .or_else(|| self.positional.clone())
            .ok_or_else(|| CliError::Config("no config given; pass --config PATH or a positional path".into()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every learner in the config and write learning curves.
    Run(ConfigArg),
    /// Run the parameter grids in the config and write a sensitivity table.
    Sweep(ConfigArg),
    /// Check convergence conditions on the exact expected system.
    Analyze(ConfigArg),
    /// Build (or reuse) the evaluation set and its rollout cache.
    Rollouts(ConfigArg),
    /// Summarize curves and sensitivity CSVs as markdown tables.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn context(cli: &Cli, loaded: &LoadedConfig) -> Context {
    let output_dir = cli
        .output_dir
        .clone()
        .or_else(|| loaded.config.output_dir.as_ref().map(|d| loaded.base_dir.join(d)))
        .unwrap_or_else(|| PathBuf::from("results"));
    let cache_dir = cli
        .cache_dir
        .clone()
        .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(".atdlab-cache"));
    Context {
        output_dir,
        cache_dir,
        seed_offset: cli.seed_offset,
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let with_config = |arg: &ConfigArg| -> Result<(LoadedConfig, Context), CliError> {
        let loaded = load_config(&arg.path()?)?;
        let ctx = context(cli, &loaded);
        Ok((loaded, ctx))
    };
    match &cli.command {
        Command::Run(arg) => {
            let (loaded, ctx) = with_config(arg)?;
            commands::run(&loaded, &ctx).map(|_| ())
        }
        Command::Sweep(arg) => {
            let (loaded, ctx) = with_config(arg)?;
            commands::sweep_cmd(&loaded, &ctx).map(|_| ())
        }
        Command::Analyze(arg) => {
            let (loaded, ctx) = with_config(arg)?;
            analyze::analyze(&loaded, &ctx).map(|_| ())
        }
        Command::Rollouts(arg) => {
            let (loaded, ctx) = with_config(arg)?;
            commands::rollouts(&loaded, &ctx)
        }
        Command::Report { files } => {
            print!("{}", report::report(files)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
