mod args;
mod commands;
mod config;
mod error;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use crate::args::Cli;
use crate::error::{CliError, CliResult, EXIT_USAGE};

fn parse(raw: Vec<OsString>) -> Result<Cli, ExitCode> {
    let names: Vec<String> = Cli::command()
        .get_subcommands()
        .map(|c| c.get_name().to_string())
        .collect();
    let args = config::merge(raw, &names).map_err(|e| report(&e))?;
    let matches = Cli::command().try_get_matches_from(args).map_err(|e| {
        let _ = e.print();
        if e.use_stderr() {
            ExitCode::from(EXIT_USAGE as u8)
        } else {
            ExitCode::SUCCESS
        }
    })?;
    Cli::from_arg_matches(&matches).map_err(|e| {
        let _ = e.print();
        ExitCode::from(EXIT_USAGE as u8)
    })
}

fn report(e: &CliError) -> ExitCode {
    eprintln!("error: {}", e.message);
    ExitCode::from(e.code as u8)
}

fn execute(cli: &Cli) -> CliResult<()> {
    let outcome = commands::run(&cli.command)?;
    morphface::io::write_files(&outcome.files)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", outcome.stdout);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
