use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

pub use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "umri", version, about = "Un-trained decoder MRI reconstruction")]
struct Cli {
    /// Worker threads for ensembles and auto-tuning (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic phantom, coil maps, mask and measurement.
    Phantom(commands::PhantomArgs),
    /// Reconstruct an image from k-space.
    Recon(commands::ReconArgs),
    /// Pick decoder hyper-parameters by k-space hold-out.
    Autotune(commands::AutotuneArgs),
    /// Score reconstructions against ground truth.
    Eval(commands::EvalArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Inputs {
    /// Coil k-space, n_c x H x W complex.
    #[arg(long)]
    pub kspace: PathBuf,
    /// Column mask.
    #[arg(long)]
    pub mask: PathBuf,
    /// Sensitivity maps, n_c x H x W complex.
    #[arg(long)]
    pub maps: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::new("internal", e.to_string()))?;
    }
    match cli.command {
        Command::Phantom(a) => commands::phantom(a),
        Command::Recon(a) => commands::recon(a),
        Command::Autotune(a) => commands::autotune(a),
        Command::Eval(a) => commands::eval(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::usage(first).to_json());
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
