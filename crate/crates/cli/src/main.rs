//! `wmlff` command line entry point.
//!
//! Exit codes: 0 on success, 1 for usage problems (bad flags, bad
//! configuration), 2 for data or file problems, 3 for numerical failures
//! during training.

mod cli;
mod commands;
mod movielens;
mod overrides;

use std::process::ExitCode;

use clap::Parser;
use wmlff_core::Error;

fn main() -> ExitCode {
    let parsed = match cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(parsed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Usage(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}
