//! `descatter` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid arguments or configuration, 3 failure
//! while simulating, 4 noise closure outside tolerance.

mod dataset_cmd;
mod noise_cmd;
mod plot;
mod spsf_cmd;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "descatter",
    version,
    about = "De-scattering microscopy forward-model simulator"
)]
struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scattering kernels at a list of depths.
    GenSpsf(spsf_cmd::Args),
    /// Generate a training dataset from a TOML or JSON config.
    MakeDataset(dataset_cmd::Args),
    /// Compare simulated EMCCD statistics with the analytic moments.
    NoiseDemo(noise_cmd::Args),
}

/// An error with the exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }

    pub fn simulation(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 3,
            error: error.into(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global pool is configured once");
    }
    let result = match cli.command {
        Command::GenSpsf(a) => spsf_cmd::run(a),
        Command::MakeDataset(a) => dataset_cmd::run(a),
        Command::NoiseDemo(a) => noise_cmd::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
