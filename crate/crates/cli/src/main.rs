//! `affectcal`: the pipeline as composable subcommands.
//!
//! Every subcommand is a pure function of its input files, flags, and seed;
//! outputs are written as the shared CSV/JSON formats so stages compose
//! through the filesystem. Exit codes: 0 success, 2 configuration error,
//! 3 data format error, 4 numeric divergence, 5 coverage error.

mod cli;
mod ops;

use std::process::ExitCode;

use clap::Parser;

use affectcal_core::Error;

fn exit_code_for(err: &Error) -> u8 {
    match err.category() {
        "config" => 2,
        "data" => 3,
        "divergence" => 4,
        "coverage" => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let args = cli::Cli::parse();
    match ops::run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.category());
            ExitCode::from(exit_code_for(&err))
        }
    }
}
