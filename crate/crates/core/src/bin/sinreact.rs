use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sinreact::cli::{run_command, Command};
use sinreact::config::parse_config;
use sinreact::exec::with_jobs;

#[derive(Parser)]
#[command(name = "sinreact", version, about = "Singular p-Laplacian reaction problems")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps and refinement levels (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Extra dyadic refinement levels; overrides `refine` in the config.
    #[arg(long)]
    refine: Option<u32>,
}

#[derive(Subcommand)]
enum Cmd {
    /// First Dirichlet eigenpair of the p-Laplacian.
    Eigen(Common),
    /// Solve -Δ_p w = μ f with zero boundary data.
    Solve(Common),
    /// Run the barrier-started iterative scheme.
    Scheme(Common),
    /// Barrier, energy, integrability, tail and threshold checks.
    Verify(Common),
    /// Scheme over the configured list of μ values.
    Sweep(Common),
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (cmd, common) = match args.command {
        Cmd::Eigen(c) => (Command::Eigen, c),
        Cmd::Solve(c) => (Command::Solve, c),
        Cmd::Scheme(c) => (Command::Scheme, c),
        Cmd::Verify(c) => (Command::Verify, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
    };
    let text = match std::fs::read_to_string(&common.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            return ExitCode::from(2);
        }
    };
    if let Some(r) = common.refine {
        cfg.refine = r;
    }
    match with_jobs(common.jobs, || run_command(cmd, &cfg, &common.out)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {} failed: {e}", cmd.name());
            ExitCode::FAILURE
        }
    }
}
