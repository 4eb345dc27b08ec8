//! `ndreg`: prepare neural data, train CNNs with the DCCA regularizer over
//! λ and seed sweeps, evaluate, attack and summarize.

mod manifest;
mod prepare;
mod report;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Environment variable naming the directory relative data paths resolve
/// against.
pub const DATA_ROOT_ENV: &str = "NDREG_DATA_ROOT";

#[derive(Parser)]
#[command(name = "ndreg", version, about = "Neural-data regularized CNN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a pseudo-population (and surrogates) from sessions or a
    /// synthetic corpus.
    Prepare(prepare::PrepareArgs),
    /// Train one run per (λ, seed) pair.
    Train(train::TrainArgs),
    /// Exact and super-class accuracy of a finished run.
    Eval(report::EvalArgs),
    /// FGSM robustness sweep of a finished run.
    Attack(report::AttackArgs),
    /// Mean and standard deviation over seeds for every λ.
    Summarize(report::SummarizeArgs),
}

/// Resolves a relative data path against the data root, if one is set.
pub fn data_path(p: &std::path::Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => prepare::run(&a),
        Command::Train(a) => train::run(&a),
        Command::Eval(a) => report::eval(&a),
        Command::Attack(a) => report::attack(&a),
        Command::Summarize(a) => report::summarize(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
