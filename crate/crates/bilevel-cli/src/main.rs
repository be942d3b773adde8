//! Command-line harness: experiment execution, verification probes and
//! convergence-plot emission for the bilevel penalty solvers.

mod config;
mod libsvm;
mod report;
mod runner;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bilevel", about = "Penalty-based bilevel optimization bench harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Replace the config's seed list.
        #[arg(long)]
        seed: Vec<u64>,
        /// Output directory (default: the config's `experiment.out_dir` or `.`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Config overrides of the form `section.key=value`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the verification probe suite for a named instance.
    Verify {
        /// One of: scalar_quadratic, quadratic, saddle, ridge, weighting, mlmc.
        instance: String,
        /// Write the probe reports as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit a gnuplot script of gradient norm vs oracle calls.
    Plot {
        csvs: Vec<PathBuf>,
        /// Plot kind (only `grad_vs_calls` for now).
        #[arg(long, default_value = "grad_vs_calls")]
        kind: String,
        /// Script output path.
        #[arg(long, default_value = "convergence.gp")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            if err.downcast_ref::<runner::UnknownSolver>().is_some() {
                eprintln!("error: {err}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {err:#}");
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run {
            config,
            seed,
            out,
            overrides,
        } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading config {}", config.display()))?;
            let mut cfg = ExperimentConfig::parse(&text)?;
            for o in &overrides {
                cfg.apply_override(o)?;
            }
            if !seed.is_empty() {
                let list = seed
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                cfg.section_mut("experiment").set("seeds", &list);
            }
            let out_dir = out.unwrap_or_else(|| {
                cfg.section("experiment")
                    .ok()
                    .and_then(|s| s.get("out_dir"))
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            let summary = runner::run_experiment(&cfg, &out_dir)?;
            println!(
                "{}: {} on {} | mean final grad {:.3e} (max {:.3e}) | {} oracle calls | pass={}",
                cfg.name(),
                summary.solver,
                summary.instance,
                summary.final_grad_stats.mean,
                summary.final_grad_stats.max,
                summary.total_oracle_calls,
                summary.pass
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Verify { instance, out } => {
            let reports = report::verify_instance(&instance)?;
            let mut all = true;
            for rep in &reports {
                println!("{}", report::report_line(rep));
                all &= rep.pass;
            }
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&reports)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(if all {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Cmd::Plot { csvs, kind, out } => {
            report::emit_plot_script(&csvs, &kind, &out)?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
