mod args;
mod cmd;
mod config;
mod failure;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use failure::{CliResult, Failure, EXIT_USAGE};

fn dispatch(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Generate(a) => cmd::generate::run(a),
        Command::Analyze(a) => cmd::analyze::run(a),
        Command::Cae(a) => cmd::cae::run(a),
        Command::Teleport(a) => cmd::teleport::run(a),
        Command::Inspect(a) => cmd::inspect::run(a),
    }
}

fn main() -> ExitCode {
    let raw: Vec<_> = std::env::args_os().collect();
    let argv = match config::expand_args(raw) {
        Ok(a) => a,
        Err(f) => {
            eprintln!("error: {f}");
            return ExitCode::from(f.code as u8);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
