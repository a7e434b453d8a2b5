//! `stealthy`: analyze plants, design stealthy attacks, run sweeps and
//! detection experiments.
//!
//! Exit status is 0 on success, 1 when a computation fails and 2 for usage
//! or input errors.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stealthy::attacks::AttackKind;
use stealthy::detect::{DetectorKind, DEFAULT_DELTA};
use stealthy::sim::DEFAULT_BURN_IN;

use commands::{CmdResult, DetectArgs, EstimatorChoice, SweepArgs};

#[derive(Parser, Debug)]
#[command(name = "stealthy", version, about = "Stealthy actuator attacks on Kalman-filtered LTI plants")]
struct Cli {
    /// Worker threads for Monte Carlo runs (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Report invariant zeros, right-invertibility and the filter baseline.
    Analyze {
        model: PathBuf,
        /// Also write the report in structured form.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Design an attack plan.
    Design {
        model: PathBuf,
        #[arg(long, value_parser = parse_attack)]
        attack: AttackKind,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "plan.txt")]
        out: PathBuf,
    },
    /// Monte Carlo sweep over stealthiness levels.
    Sweep {
        model: PathBuf,
        #[arg(long, value_parser = parse_attack)]
        attack: AttackKind,
        /// Comma-separated, strictly increasing.
        #[arg(long)]
        eps_grid: String,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 2000)]
        horizon: usize,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Empirical ROC and false-alarm exponent of a detector against a plan.
    Detect {
        model: PathBuf,
        plan: PathBuf,
        #[arg(long, default_value = "llr", value_parser = parse_detector)]
        detector: DetectorKind,
        /// Allowed missed-detection probability.
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        /// Sliding window; the whole horizon when absent.
        #[arg(long)]
        window: Option<usize>,
        /// `start:stop:step` or a comma-separated list.
        #[arg(long, default_value = "5:60:5")]
        horizons: String,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_BURN_IN)]
        burn_in: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// auto, direct or change-of-measure.
        #[arg(long, default_value = "auto")]
        estimator: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Output directory; defaults to the one in the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_attack(s: &str) -> Result<AttackKind, String> {
    s.parse().map_err(|e: stealthy::Error| e.to_string())
}

fn parse_detector(s: &str) -> Result<DetectorKind, String> {
    s.parse().map_err(|e: stealthy::Error| e.to_string())
}

fn dispatch(command: Command) -> CmdResult<String> {
    match command {
        Command::Analyze { model, out } => commands::analyze(&model, out.as_deref()),
        Command::Design {
            model,
            attack,
            eps,
            seed,
            out,
        } => commands::design_plan(&model, attack, eps, seed, &out),
        Command::Sweep {
            model,
            attack,
            eps_grid,
            runs,
            horizon,
            burn_in,
            seed,
            out,
        } => {
            let csv = commands::run_sweep(&SweepArgs {
                model,
                attack,
                grid: commands::parse_list(&eps_grid, "ε")?,
                runs,
                horizon,
                burn_in,
                seed,
                out,
            })?;
            Ok(csv)
        }
        Command::Detect {
            model,
            plan,
            detector,
            delta,
            window,
            horizons,
            trials,
            burn_in,
            seed,
            estimator,
            out,
        } => commands::run_detect(&DetectArgs {
            model,
            plan,
            detector,
            delta,
            window,
            horizons: commands::parse_horizons(&horizons)?,
            trials,
            burn_in,
            seed,
            estimator: estimator.parse::<EstimatorChoice>()?,
            out,
        }),
        Command::Replay { manifest, out } => commands::replay(&manifest, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(text) => {
            commands::print(&text);
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

