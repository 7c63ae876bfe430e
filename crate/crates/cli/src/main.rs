//! `biofilm-gds`: runs, convergence studies and quality studies of the
//! biofilm obstacle model from a TOML configuration.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{execute, Command};

#[derive(Parser)]
#[command(name = "biofilm-gds", version, about = "Gradient schemes for a biofilm obstacle model")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long, env = "BIOFILM_GDS_OUT")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve the configured problem and write snapshots and step diagnostics.
    Run(Common),
    /// Measure errors and observed orders on a mesh family.
    Convergence(Common),
    /// Measure coercivity, consistency and conformity on a mesh family.
    Quality(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Run(a) => (Command::Run, a),
        Sub::Convergence(a) => (Command::Convergence, a),
        Sub::Quality(a) => (Command::Quality, a),
    };
    if let Some(k) = args.threads {
        if k == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match execute(command, &args.config, args.out) {
        Ok(dir) => {
            log::info!("done, manifest in `{}`", dir.join(artifacts::MANIFEST).display());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.exit_code())
        }
    }
}
