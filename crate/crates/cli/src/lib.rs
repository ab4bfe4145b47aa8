//! Command-line front end and HTTP service for the o2m engine.

pub mod cli;
mod commands;
pub mod error;
pub mod service;

use clap::Parser;
use cli::{Cli, Command};
use error::CliError;
use std::ffi::OsString;

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Fixture(a) => commands::fixture(a),
        Command::Generate(a) => commands::generate(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Select(a) => commands::select(a),
        Command::Demos(a) => commands::demos(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Tally(a) => commands::tally(a),
        Command::Significance(a) => commands::significance_cmd(a),
        Command::Serve(a) => commands::serve(a),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
/// Help and version requests exit 0; any other parse failure exits 1.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
