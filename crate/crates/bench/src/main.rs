use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fasnoma_bench::summary::{expand_pattern, write_summary_file};
use fasnoma_bench::{run_experiment, summarize_files, ExperimentConfig, Result};

#[derive(Parser)]
#[command(version, about = "Monte Carlo sweeps for fluid-antenna NOMA secrecy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write CSVs plus a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; falls back to `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads, default all cores.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Recompute the summary from one or more trial CSVs.
    Summarize {
        /// Glob matching trial CSVs.
        #[arg(long = "in")]
        input: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, trials, seed, workers } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(n) = trials {
                cfg.num_trials = n;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let out = out.or_else(|| cfg.output_dir.clone()).ok_or_else(|| {
                fasnoma_bench::BenchError::Config("no output directory: pass --out or set output_dir".into())
            })?;
            cfg.output_dir = Some(out.clone());
            let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let report = run_experiment(&cfg, &out, workers)?;
            let failed = report.records.iter().filter(|r| r.status == fasnoma_bench::TrialStatus::Error).count();
            eprintln!(
                "{} records in {:.1}s ({failed} errored), written to {}",
                report.records.len(),
                report.wall_time.as_secs_f64(),
                report.out_dir.display()
            );
            for row in &report.summary {
                eprintln!(
                    "{}={:<6} {:<9} mean {:.4} [{:.4}, {:.4}] feasible {:.3}",
                    row.sweep_axis,
                    row.sweep_value,
                    row.method.name(),
                    row.mean,
                    row.ci_low,
                    row.ci_high,
                    row.feasible_fraction
                );
            }
            Ok(())
        }
        Command::Summarize { input, out } => {
            let paths = expand_pattern(&input)?;
            let rows = summarize_files(&paths)?;
            write_summary_file(&rows, &out)?;
            eprintln!("{} rows from {} files", rows.len(), paths.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
