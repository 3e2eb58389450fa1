use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod report;

use report::Status;

/// Grounded-output protocol and evaluation toolkit.
#[derive(Parser)]
#[command(name = "groundkit", version)]
struct Cli {
    /// Worker threads for parallel stages; defaults to the available cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score predictions against COCO-style ground truth.
    EvalDet(commands::eval::EvalArgs),
    /// Parse a grounded answer and resolve it to boxes.
    Parse(commands::parse::ParseArgs),
    /// Run seeded retrieval/regression simulations.
    Simulate(commands::simulate::SimulateArgs),
    /// Look for repeated-step boxes, truncation and token-loss effects.
    Pathology(commands::pathology::PathologyArgs),
    /// Run the annotation engine over a manifest.
    #[command(subcommand)]
    Engine(commands::engine::EngineCommand),
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    if let Some(n) = cli.jobs {
        anyhow::ensure!(n > 0, "--jobs must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::EvalDet(a) => commands::eval::run(a),
        Command::Parse(a) => commands::parse::run(a),
        Command::Simulate(a) => commands::simulate::run(a),
        Command::Pathology(a) => commands::pathology::run(a),
        Command::Engine(c) => commands::engine::run(c, cli.jobs),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Clean) => ExitCode::SUCCESS,
        Ok(Status::Warnings) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
