use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "jsccf",
    about = "Layered joint source-channel coding of images over simulated noisy channels with feedback"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train all layers sequentially and write a checkpoint.
    Train(RunArgs),
    /// Evaluate a checkpoint over the dataset (eval.csv).
    Eval(RunArgs),
    /// Evaluate over a grid of test and feedback SNRs (sweep.csv).
    Sweep(RunArgs),
    /// Variable-length transmission to target PSNRs (varlen.csv).
    Varlen(RunArgs),
    /// Separation-based bounds and digital schemes (baseline.csv).
    Baseline(RunArgs),
    /// Finite-difference verification of every differentiable op.
    Gradcheck(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (sub, args) = match &cli.command {
        Command::Train(a) => (jsccf_cli::Subcommand::Train, a),
        Command::Eval(a) => (jsccf_cli::Subcommand::Eval, a),
        Command::Sweep(a) => (jsccf_cli::Subcommand::Sweep, a),
        Command::Varlen(a) => (jsccf_cli::Subcommand::Varlen, a),
        Command::Baseline(a) => (jsccf_cli::Subcommand::Baseline, a),
        Command::Gradcheck(a) => (jsccf_cli::Subcommand::Gradcheck, a),
    };
    match jsccf_cli::run(sub, &args.config, args.seed, args.out.clone()) {
        Ok(_) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
