use clap::Parser;
use std::process::ExitCode;
use tagsoa::cli::{execute, Cli};

fn main() -> ExitCode {
    execute(Cli::parse())
}
