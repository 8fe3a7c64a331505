//! Experiment runner for the block-coordinate optimistic-gradient solvers:
//! executes configured runs seed-parallel, drives the acceptance check
//! suites, and exports seed-aggregated plot data.

mod config;
mod export;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use blocksolve_core::checks::{run_suite, Suite};
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "blocksolve",
    version,
    about = "Randomized block-coordinate solver runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the runs described by a JSON config and write traces plus a
    /// summary into its output directory.
    Run {
        /// Path to the run configuration (JSON).
        config: PathBuf,
    },
    /// Run a named check suite (lemmas, solvers, federated, all); exits
    /// nonzero if any check fails.
    Check {
        /// Suite name.
        suite: String,
    },
    /// Aggregate the traces in a run output directory into plot-ready CSV.
    ExportPlotdata {
        /// Directory produced by `run`.
        dir: PathBuf,
    },
}

fn cmd_run(path: &PathBuf) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let config = RunConfig::from_json(&text)?;
    let config_dir = path
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let summary = run::cmd_run(&config, &config_dir)?;
    println!(
        "ran {} seed(s) of {:?} for {} iterations in {} ms -> {}",
        summary.seeds.len(),
        summary.solver,
        summary.iterations,
        summary.wall_time_ms,
        config.output_dir.display()
    );
    for fit in &summary.fits {
        println!(
            "  fitted {} slope {:.4} over k in [{}, {}]",
            fit.metric, fit.slope, fit.k_lo, fit.k_hi
        );
    }
    for bound in &summary.bounds {
        println!(
            "  bound {:<32} lhs={:.6e} rhs={:.6e} {}",
            bound.name,
            bound.lhs,
            bound.rhs,
            if bound.satisfied {
                "satisfied"
            } else {
                "VIOLATED"
            }
        );
    }
    Ok(())
}

fn cmd_check(suite: &str) -> Result<bool> {
    let suite: Suite = suite.parse()?;
    let reports = run_suite(suite);
    let mut all_pass = true;
    for report in &reports {
        println!("{}", report.line());
        all_pass &= report.pass;
    }
    let passed = reports.iter().filter(|r| r.pass).count();
    println!("{passed}/{} checks passed", reports.len());
    Ok(all_pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config } => cmd_run(config).map(|_| true),
        Command::Check { suite } => cmd_check(suite),
        Command::ExportPlotdata { dir } => export::cmd_export_plotdata(dir).map(|path| {
            println!("wrote {}", path.display());
            true
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
