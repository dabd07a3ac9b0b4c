use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msl_cli::{parse_config, run, CliError, Settings};

#[derive(Parser)]
#[command(name = "msl", version, about = "Continual domain-generalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a grid of methods × held-out domains × seeds
    Run {
        /// TOML config; every key is optional and mirrored by a flag
        #[arg(long)]
        config: PathBuf,

        #[command(flatten)]
        flags: Settings,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, flags } => {
            let cfg = parse_config(&config, flags)?;
            let summary = run(&cfg)?;
            print!("{}", summary.table);
            match summary.failures() {
                0 => Ok(()),
                failed => Err(CliError::CellsFailed {
                    failed,
                    total: summary.cells.len(),
                }),
            }
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
