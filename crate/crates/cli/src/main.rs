use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    spa_cli::run(&spa_cli::Cli::parse())
}
