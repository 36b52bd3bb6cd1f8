use std::process::ExitCode;

use castgan::cli::{exit_code, run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    castgan::tensor::retain_heap();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
