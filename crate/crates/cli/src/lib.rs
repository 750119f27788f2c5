// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end. Every command writes its outputs and one
//! `<command>.manifest.json` into the output directory.
//!
//! Exit codes: 0 success, 2 usage, 3 input validation, 4 numerical
//! divergence. Failures print one JSON line on stderr:
//! `{"code":3,"error":"<kind>","message":"..."}`.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod report;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use crate::args::Cli;
use crate::error::{CliError, EXIT_OK, EXIT_USAGE};

/// Parse `argv`, run the command and return the process exit code.
pub fn main_with_args(argv: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return EXIT_OK;
        }
        Err(e) => {
            let message = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&message).trim_start_matches("error: ");
            eprintln!("{}", json!({"error": "usage", "code": EXIT_USAGE, "message": first}));
            return EXIT_USAGE;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let threads = cli.command.common().threads;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| commands::execute(&cli.command))
}
