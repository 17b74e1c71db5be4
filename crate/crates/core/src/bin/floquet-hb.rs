use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use floquet_hb::config::{Experiment, RunConfig};
use floquet_hb::runner::{self, RunError};

#[derive(Parser)]
#[command(name = "floquet-hb", version, about = "Harmonic-balance experiments for driven nonlinear oscillators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// NEFS and OFS solves compared with direct integration.
    Forward(RunArgs),
    /// Inverse design of control parameters for a target frequency shift.
    Engineer(RunArgs),
    /// Inverse design continued over a model parameter.
    Sweep(RunArgs),
    /// Harmonic-balance design against the second-order effective force.
    CompareMagnus(RunArgs),
    /// Forward solve cross-checked against the independent oracles.
    Verify(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `output.dir` in the config.
    #[arg(long, value_name = "DIR", env = "FLOQUET_HB_OUT")]
    out: Option<PathBuf>,
    /// Solve on the 15x15 grid, dropping the harmonics it aliases.
    #[arg(long)]
    paper_parity: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match cli.command {
        Command::Forward(a) => (Experiment::Forward, a),
        Command::Engineer(a) => (Experiment::Engineer, a),
        Command::Sweep(a) => (Experiment::Sweep, a),
        Command::CompareMagnus(a) => (Experiment::CompareMagnus, a),
        Command::Verify(a) => (Experiment::Verify, a),
    };
    match execute(experiment, &args) {
        Ok(dir) => {
            eprintln!("{experiment}: done, results in {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{experiment}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(experiment: Experiment, args: &RunArgs) -> Result<PathBuf, RunError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if args.paper_parity {
        cfg.basis.paper_parity = true;
        cfg.basis.grid = None;
    }
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    runner::run(experiment, &cfg, &dir)?;
    Ok(dir)
}
