//! Command-line driver for the `zenolock` simulations: reads a sectioned
//! config, runs one experiment and writes CSV traces, optional SVG plots
//! and a manifest.

pub mod commands;
pub mod config;
pub mod plot;
pub mod trace;

pub use commands::{run, CliError, Report, RunOptions, Subcommand};
pub use trace::TraceRecord;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "ZENOLOCK_THREADS";

/// Sizes the global rayon pool from [`THREADS_ENV`] when it holds a
/// positive integer.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            CliError::Failed(format!("{THREADS_ENV}={value} is not a positive integer"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Failed(e.to_string()))
}
