use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use noniid_cli::args::Cli;
use noniid_cli::error::{CliError, EXIT_VIOLATION};
use noniid_cli::run_experiment;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let cfg = cli.command.to_config()?;
    let outcome = run_experiment(&cfg)?;
    eprint!("{}", outcome.summary);
    match &cfg.out {
        Some(path) => std::fs::write(path, &outcome.text)
            .map_err(|source| CliError::Write { path: path.display().to_string(), source })?,
        None => std::io::stdout()
            .write_all(outcome.text.as_bytes())
            .map_err(|source| CliError::Write { path: "<stdout>".into(), source })?,
    }
    Ok(if outcome.passed { 0 } else { EXIT_VIOLATION })
}
