//! Pipeline driver: every figure-class output as a subcommand over a JSON
//! config, writing tidy CSV artifacts and a per-command manifest.

mod config;
mod pipeline;

use std::process::ExitCode;

use clap::Parser;

use crate::pipeline::{CliError, EXIT_CONFIG, EXIT_GATE, EXIT_IO};

fn main() -> ExitCode {
    let cli = pipeline::Cli::parse();
    match pipeline::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                CliError::Config(_) => EXIT_CONFIG,
                CliError::Gate(_) => EXIT_GATE,
                CliError::Io(_) => EXIT_IO,
                CliError::Core(ref err) => match err {
                    polsens::Error::Io { .. } | polsens::Error::Csv { .. } => EXIT_IO,
                    _ => EXIT_CONFIG,
                },
            };
            ExitCode::from(code)
        }
    }
}
