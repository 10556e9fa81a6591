use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use kslab_cli::{error_exit_code, parse_config_with, run_experiment, ExperimentKind, Outcome};

#[derive(Parser)]
#[command(name = "kslab", version, about = "Keller-Segel chemotaxis numerics")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (`key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides the `out` key.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; falls back to KSE_THREADS, then to the core count.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Evolve a density and record trajectory and norms.
    Simulate,
    /// Measure the relaxation gap over a list of tau values.
    TauSweep,
    /// Compute the blow-up certificate sequences.
    Certificate,
    /// Simulate the Fourier system and verify the certificate.
    BlowupSim,
    /// Evaluate the norm suite along a trajectory.
    Norms,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Simulate => ExperimentKind::Simulate,
            Command::TauSweep => ExperimentKind::TauSweep,
            Command::Certificate => ExperimentKind::Certificate,
            Command::BlowupSim => ExperimentKind::BlowupSim,
            Command::Norms => ExperimentKind::Norms,
        }
    }
}

fn configure_threads(requested: Option<usize>) -> anyhow::Result<()> {
    let threads = match requested {
        Some(n) => Some(n),
        None => match std::env::var("KSE_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .with_context(|| format!("KSE_THREADS = {v:?} is not a count"))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let text = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: reading {}: {e}", path.display());
                return ExitCode::from(1);
            }
        },
        None => String::new(),
    };
    let cfg = match parse_config_with(&text, Some(cli.command.kind())) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let out = cli
        .out
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("kslab-{}", cfg.kind)));
    match run_experiment(&cfg, &out) {
        Ok(report) => {
            if let Outcome::NumericalFailure(msg) = &report.outcome {
                eprintln!("warning: {msg}; partial results in {}", out.display());
            }
            for f in &report.files {
                println!("{}", f.display());
            }
            ExitCode::from(report.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_exit_code(&e))
        }
    }
}
