use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use zenolock_cli::{configure_threads, run, RunOptions, Subcommand};

/// Phase-locked clock simulations: dephasing, Zeno locking and readout.
#[derive(Parser, Debug)]
#[command(name = "zenolock", version)]
struct Args {
    #[arg(value_enum)]
    subcommand: Subcommand,
    /// Sectioned config file; missing keys take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if needed.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the dephasing seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write SVG plots.
    #[arg(long)]
    plots: bool,
    /// Fail (exit 3) when any run is flagged out of regime.
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let opts = RunOptions {
        subcommand: args.subcommand,
        config_path: args.config,
        out: args.out,
        seed: args.seed,
        plots: args.plots,
        strict: args.strict,
    };
    let result = configure_threads().and_then(|_| run(&opts));
    match result {
        Ok(report) => {
            print!("{}", report.stdout);
            for flag in &report.flags {
                eprintln!("warning: {flag}");
            }
            for file in &report.files {
                eprintln!("wrote {}", file.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
