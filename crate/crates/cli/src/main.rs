mod args;
mod commands;
mod report;

use std::process::ExitCode;

use clap::Parser;

/// Sizes the global worker pool from `DAS_THREADS` (unset or 0 = one per
/// core).
fn configure_threads() {
    let Ok(raw) = std::env::var("DAS_THREADS") else {
        return;
    };
    match raw.trim().parse::<usize>() {
        Ok(0) => {}
        Ok(n) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size worker pool: {e}");
            }
        }
        Err(_) => log::warn!("ignoring DAS_THREADS={raw:?}: not a non-negative integer"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = args::Cli::parse();
    configure_threads();
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
