mod config;
mod plot;
mod sweep;

use anyhow::Context;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Exit codes: 0 success, 1 usage/config error, 2 validation failure,
/// 3 numerical failure.
const EXIT_CONFIG: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "cka", about = "Passive conference key agreement simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the key rate over a range of channel losses, writing a CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Evaluate a single loss point and print the report.
    Point {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_name = "DB")]
        loss_db: f64,
    },
    /// Run the oracle suite and report pass/fail per check.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Deliberately corrupt an internal quantity to exercise the
        /// failure path.
        #[arg(long, value_name = "FAULT")]
        inject_fault: Option<String>,
    },
    /// Write a standalone plot script for a sweep CSV.
    EmitPlot { csv: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Sweep { config, output } => {
            let cfg = config::RunConfig::load(&config)
                .with_context(|| format!("loading config {}", config.display()))?;
            config::init_workers(cfg.workers);
            let outcome = sweep::run_sweep(&cfg, &output)?;
            eprintln!("wrote {} rows to {}", outcome.rows, output.display());
            if outcome.numerical_failures > 0 {
                eprintln!(
                    "{} loss points hit numerical-tolerance failures (rows marked in CSV)",
                    outcome.numerical_failures
                );
                return Ok(ExitCode::from(EXIT_NUMERICAL));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Point { config, loss_db } => {
            let cfg = config::RunConfig::load(&config)?;
            config::init_workers(cfg.workers);
            match sweep::evaluate_point(&cfg, loss_db) {
                Ok(report) => {
                    println!("loss_db = {loss_db}");
                    println!("rate_passive = {:.16e}", report.rate_passive);
                    println!("rate_active_limit = {:.16e}", report.rate_active_limit);
                    for (j, pr) in report.pr_omega_canonical.iter().enumerate() {
                        println!("pr_omega_canonical_{j} = {pr:.16e}");
                    }
                    println!(
                        "combinations: evaluated {}, cut {}, enumerated {}",
                        report.combinations_evaluated,
                        report.combinations_cut,
                        report.combinations_enumerated
                    );
                    Ok(ExitCode::SUCCESS)
                }
                Err(err) => {
                    eprintln!("numerical failure: {err}");
                    Ok(ExitCode::from(EXIT_NUMERICAL))
                }
            }
        }
        Command::Validate {
            config,
            inject_fault,
        } => {
            let cfg = config::RunConfig::load(&config)?;
            config::init_workers(cfg.workers);
            let inject = match inject_fault.as_deref() {
                None => None,
                Some("transition-row-sum") => {
                    Some(cka_core::validation::FaultInjection::TransitionRowSum)
                }
                Some(other) => anyhow::bail!(
                    "unknown fault `{other}` (expected `transition-row-sum`)"
                ),
            };
            let channel = cfg.channel_config(cfg.loss.start_db)?;
            let opts = cka_core::validation::ValidationOptions {
                mc_trials: cfg.mc_trials,
                seed: cfg.seed,
                inject,
            };
            let results = cka_core::validation::run_validation_suite(&channel, &opts)
                .map_err(|e| anyhow::anyhow!("validation suite failed to run: {e}"))?;
            let mut all_pass = true;
            for r in &results {
                let verdict = if r.passed { "PASS" } else { "FAIL" };
                println!(
                    "{verdict} {:<32} measured {:.3e} threshold {:.3e}  {}",
                    r.name, r.measured, r.threshold, r.detail
                );
                all_pass &= r.passed;
            }
            if all_pass {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(EXIT_VALIDATION))
            }
        }
        Command::EmitPlot { csv } => {
            let script = plot::emit_plot(&csv)?;
            println!("wrote {}", script.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
