use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rdslab_cli::config::{Experiment, ExperimentConfig, Overrides};
use rdslab_cli::{default_out_dir, run_experiment, HarnessError};

#[derive(Parser)]
#[command(name = "rdslab", version, about = "Run random dynamical system experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config; the built-in default is used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config field, e.g. `--set model.mu=0.25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Output directory (default `out/<experiment>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Noise seed, overriding `noise.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve the random PDE from the initial state.
    Simulate,
    /// Lyapunov spectrum along an explicit orbit.
    Lyapunov,
    /// Random stationary point over an orbit segment.
    Stationary,
    /// Local invariant manifold charts around the stationary point.
    Manifold,
    /// Ensemble check of the a priori and derivative bounds.
    CertifyBounds,
    /// Step-size refinement study.
    Convergence,
    /// Print the resolved config without running anything.
    ShowConfig,
}

impl Command {
    fn experiment(self) -> Option<Experiment> {
        Some(match self {
            Command::Simulate => Experiment::Simulate,
            Command::Lyapunov => Experiment::Lyapunov,
            Command::Stationary => Experiment::Stationary,
            Command::Manifold => Experiment::Manifold,
            Command::CertifyBounds => Experiment::CertifyBounds,
            Command::Convergence => Experiment::Convergence,
            Command::ShowConfig => return None,
        })
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let overrides = Overrides { set: cli.set, seed: cli.seed, out: cli.out, experiment: cli.command.experiment() };
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    if cli.command.experiment().is_none() {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return Ok(());
    }
    let manifest = run_experiment(&cfg)?;
    let dir = cfg.run.out_dir.clone().unwrap_or_else(|| default_out_dir(&cfg));
    println!("{}: wrote {} files to {}", manifest.experiment, manifest.outputs.len() + 1, dir.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
