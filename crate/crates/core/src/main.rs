use std::process::ExitCode;

use clap::Parser;
use pcasvm_cam::cli::{run, Cli};

fn main() -> ExitCode {
    run(Cli::parse())
}
