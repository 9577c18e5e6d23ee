//! `gfm-bess` experiment runner.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 model,
//! convergence or output failure.

mod args;
mod commands;
mod output;
mod units;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Model(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Model(_) => 2,
        }
    }
}

impl From<gfm_bess::Error> for Failure {
    fn from(e: gfm_bess::Error) -> Self {
        use gfm_bess::Error as E;
        match e {
            E::ConfigIo { .. }
            | E::ConfigParse { .. }
            | E::UnknownKey { .. }
            | E::InvalidParam { .. }
            | E::Scenario(_) => Failure::Usage(e.to_string()),
            other => Failure::Model(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Model(format!("writing output: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) | Failure::Model(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
