//! `vpg`: operational shell for the visual product graph engine.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use clap::error::ErrorKind;
use clap::Parser;

use vpg_cli::commands::{self, Cli};
use vpg_cli::logging;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => {}
        Err(e) => {
            logging::error("command_failed", &[("error", &e.to_string())]);
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
