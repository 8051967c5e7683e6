//! `spikegrad` command-line tool.
//!
//! Exit codes: 0 success, 1 check failed, 2 usage error, 3 I/O or data error.

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

mod args;
mod commands;
mod manifest;
mod output;

use args::{expand_config, Cli};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<spikegrad::Error> for CliError {
    fn from(e: spikegrad::Error) -> Self {
        use spikegrad::Error as E;
        match e {
            E::Dimension { .. } | E::Consistency(_) | E::InvalidParameter(_) => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

fn run(argv: Vec<OsString>) -> i32 {
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::execute(&cli.command) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn main() {
    std::process::exit(run(std::env::args_os().collect()));
}
