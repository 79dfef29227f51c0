use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mabo::cli::{cmd_compare, cmd_run, CliError, Mode};

#[derive(Parser)]
#[command(name = "mabo", version, about = "Multi-agent Bayesian optimization with consensus ADMM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mode and write its per-iteration trace as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "mabo")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run BO agents and the model-based baseline side by side.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<String, CliError> = match cli.command {
        Command::Run { config, mode, out, seed } => cmd_run(&config, &out, mode, seed),
        Command::Compare { config, out } => cmd_compare(&config, &out),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
