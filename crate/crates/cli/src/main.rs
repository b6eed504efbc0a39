use std::process::ExitCode;

use clap::Parser;

mod commands;
mod manifest;

use commands::Cli;

/// Exit codes by error category.
const EXIT_CONFIG: u8 = 3;
const EXIT_DATA: u8 = 4;
const EXIT_BACKEND: u8 = 5;
const EXIT_NUMERICAL: u8 = 6;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 0 for --help and 2 for usage errors.
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use transkt_core::ErrorCategory;
    match err.downcast_ref::<transkt_core::Error>().map(|e| e.category()) {
        Some(ErrorCategory::Config) => EXIT_CONFIG,
        Some(ErrorCategory::Backend) => EXIT_BACKEND,
        Some(ErrorCategory::Numerical) => EXIT_NUMERICAL,
        Some(ErrorCategory::Data) | None => EXIT_DATA,
    }
}
