use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use gruschin_core::config::ExperimentConfig;
use gruschin_core::exec::{with_workers, ExecPolicy};
use gruschin_core::experiment::{dump_paths, list_builtins, run_experiment, write_artifacts};

/// Monte Carlo gradient estimates and bound checks for Gruschin-type
/// diffusions.
#[derive(Debug, Parser)]
#[command(name = "gruschin", version)]
struct Cli {
    /// Number of worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory; overrides the config and `GRUSCHIN_OUT`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the suites named in a TOML config and write CSV/JSON/Markdown.
    Run { config: PathBuf },
    /// Print built-in models, test functions, and integrands.
    ListBuiltins,
    /// Write a per-path audit CSV for the first (T, z0, v) of a config.
    DumpPaths { config: PathBuf },
}

fn policy(workers: Option<usize>) -> ExecPolicy {
    if workers == Some(1) {
        ExecPolicy::Sequential
    } else {
        ExecPolicy::Parallel
    }
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn out_dir(cli_out: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    cli_out
        .or_else(|| std::env::var_os("GRUSCHIN_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output.directory))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let workers = cli.workers;
    match cli.command {
        Command::ListBuiltins => {
            print!("{}", list_builtins());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config } => {
            let cfg = load(&config)?;
            let outcome = with_workers(workers, || run_experiment(&cfg, policy(workers)))??;
            let dir = out_dir(cli.out, &cfg);
            let written = write_artifacts(&outcome, &cfg.output.formats, &dir)
                .with_context(|| format!("writing artifacts to {}", dir.display()))?;
            for s in &outcome.statuses {
                let tag = if s.passed { "PASS" } else { "FAIL" };
                println!("{tag} {}: {}", s.check, s.summary);
            }
            for path in written {
                log::info!("wrote {}", path.display());
            }
            Ok(if outcome.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::DumpPaths { config } => {
            let cfg = load(&config)?;
            let csv = with_workers(workers, || dump_paths(&cfg, policy(workers)))??;
            let dir = out_dir(cli.out, &cfg);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("paths.csv");
            std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
            println!("{}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
