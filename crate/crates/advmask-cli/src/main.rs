//! `advmask` binary: attack, evaluate, sweep-beta, and make-mask commands.
//!
//! Exit codes: 0 on success, 1 for configuration or usage errors, 2 when a
//! run completed but some probes failed (partial results).

mod args;
mod artifacts;
mod commands;
mod config;

use clap::error::ErrorKind;
use clap::Parser;

use crate::commands::RunStatus;

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let requested = matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if requested { 0 } else { 1 };
        }
    };
    match commands::run(&cli) {
        Ok(RunStatus::Clean) => 0,
        Ok(RunStatus::Partial { failed, total }) => {
            eprintln!("warning: {failed} of {total} probes failed; results are partial");
            2
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    }
}
