use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use mindisp_cli::run::RunOptions;

#[derive(Parser)]
#[command(
    name = "mindisp",
    version,
    about = "Minimum-dispersion control of stochastic ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Artifact directory [default: config `[output] dir`, then $MINDISP_OUT, then ./mindisp-out]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the descent and write cost trace, control, sample paths and report.
    Run {
        config: PathBuf,
        /// Validate and print the resolved config without running.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run the estimator oracle checks and write diagnostics.json.
    Diagnose { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("mindisp: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()?;
    match cli.command {
        Command::Run { config, dry_run } => {
            let opts = RunOptions {
                seed: cli.seed,
                out: cli.out,
                dry_run,
            };
            let outcome = mindisp_cli::run::run(&config, &opts)?;
            if let (Some(dir), Some(report)) = (outcome.out_dir, outcome.report) {
                println!(
                    "best cost {:.6} ± {:.2e} at iteration {} ({:?}); artifacts in {}",
                    report.best_cost,
                    report.best_std_error,
                    report.best_iteration,
                    report.stop_reason,
                    dir.display()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Diagnose { config } => {
            let (dir, diag) =
                mindisp_cli::diagnose::diagnose(&config, cli.seed, cli.out.as_deref())?;
            for c in &diag.checks {
                let verdict = if c.passed { "PASS" } else { "FAIL" };
                println!(
                    "{verdict} {:<20} measured={:.6e} expected={:.6e} {}={:.3e} (threshold {:.1e}) {}",
                    c.name, c.measured, c.expected, c.statistic, c.score, c.threshold, c.detail
                );
            }
            println!(
                "diagnostics written to {}",
                dir.join("diagnostics.json").display()
            );
            Ok(if diag.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
    }
}
