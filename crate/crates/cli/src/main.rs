use std::process::ExitCode;

use clap::Parser;
use rlobj_cli::{emit, run, RunConfig, EXIT_INPUT};

fn main() -> ExitCode {
    let config = RunConfig::parse();
    let outcome = run(&config);
    if let Some(error) = &outcome.report.error {
        eprintln!("error: {}", error.message);
    }
    match emit(&config, &outcome) {
        Ok(Some(text)) => print!("{text}"),
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INPUT as u8);
        }
    }
    ExitCode::from(outcome.exit_code as u8)
}
