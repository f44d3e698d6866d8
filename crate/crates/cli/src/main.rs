//! `hmc-transfer <experiment> --config run.toml --out dir/`
//!
//! Exit status: 0 when every check passes, 2 when a certificate check
//! fails, 1 on any error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hmc_transfer::experiment::{run_experiment, ExperimentConfig, ExperimentKind, Outcome};

#[derive(Parser)]
#[command(
    name = "hmc-transfer",
    version,
    about = "Transfer-operator experiments for Hamiltonian Monte Carlo"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trajectory, energy drift and Jacobian determinant along the flow.
    Flow(Common),
    /// Fixed point, mass, contraction, positivity and adjoint duality.
    Operator(Common),
    /// Leading eigenvalues and the spectral gap.
    Spectrum(Common),
    /// Hilbert-Schmidt norm of the kernel by two routes.
    KernelNorm(Common),
    /// Density iteration and the convergence-rate certificate.
    Convergence(Common),
    /// HMC chain histogram against the operator fixed point.
    SamplerCheck(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Command::Flow(c) => (ExperimentKind::Flow, c),
            Command::Operator(c) => (ExperimentKind::Operator, c),
            Command::Spectrum(c) => (ExperimentKind::Spectrum, c),
            Command::KernelNorm(c) => (ExperimentKind::KernelNorm, c),
            Command::Convergence(c) => (ExperimentKind::Convergence, c),
            Command::SamplerCheck(c) => (ExperimentKind::SamplerCheck, c),
        }
    }
}

fn run(kind: ExperimentKind, args: &Common) -> hmc_transfer::Result<Outcome> {
    hmc_transfer::configure_threads(args.threads)?;
    let mut config = ExperimentConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        config.experiment.seed = seed;
    }
    let resolved = config.resolve(kind)?;
    run_experiment(kind, &resolved, &args.out, args.threads)
}

fn report(outcome: &Outcome) {
    for c in &outcome.checks {
        println!(
            "{:4} {:<32} {:.6e} {} {:.3e}",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.value,
            c.relation,
            c.bound
        );
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    match run(kind, &args) {
        Ok(outcome) => {
            report(&outcome);
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("{kind}: certificate failed");
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
