use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use avb::experiment::{read_result, replay, run_experiment, write_outputs, ExperimentConfig};

/// Adaptive variational Bayes experiments.
#[derive(Parser)]
#[command(
    version,
    about,
    after_help = "Set AVB_LOG (error, warn, info, debug, trace) to control logging."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its result files.
    Run {
        config: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed; overrides `seeds.master` in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Recompute the model weights of a result file from its stored objectives.
    Replay { result: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AVB_LOG", "info")).init();
    match execute(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> avb::Result<ExitCode> {
    match command {
        Command::Run {
            config,
            jobs,
            out,
            seed,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seeds.master = s;
            }
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("results"));
            let output = run_experiment(&cfg, jobs)?;
            write_outputs(&output, &dir)?;
            let s = &output.summary;
            println!(
                "{} repeat(s) of {:?} written to {}",
                s.repeats,
                s.kind,
                dir.display()
            );
            for (name, m) in &s.metrics {
                println!("  {name}: median {:.6}, mean {:.6}", m.median, m.mean);
            }
            if !s.dominance_holds_everywhere {
                eprintln!("warning: the averaged objective exceeded the selected objective in some repeat");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!(
                "{}: valid {:?} config, {} repeat(s)",
                config.display(),
                cfg.kind,
                cfg.seeds.repeats
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { result } => {
            let run = read_result(&result)?;
            let report = replay(&run);
            println!(
                "{} models, max |gamma diff| {:.3e}, max |log gamma diff| {:.3e}: {}",
                report.models,
                report.max_abs_gamma_diff,
                report.max_abs_log_gamma_diff,
                if report.consistent {
                    "consistent"
                } else {
                    "INCONSISTENT"
                }
            );
            Ok(if report.consistent {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
