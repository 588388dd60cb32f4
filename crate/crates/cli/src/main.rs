//! `dmkit` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::{Cli, UsageError};

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<dmkit::Error>() {
            return match err {
                dmkit::Error::Config(_)
                | dmkit::Error::Parse { .. }
                | dmkit::Error::Json(_)
                | dmkit::Error::Scenario(_)
                | dmkit::Error::Dimension { .. } => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = exit_code(&e);
            if code == 2 {
                eprintln!("run `dmkit --help` for usage");
            }
            ExitCode::from(code)
        }
    }
}
