//! `transport-sa`: transported mean potential outcomes under an adherence
//! ratio, with static, bounds and Monte Carlo sensitivity analyses.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::Report;

#[derive(Parser)]
#[command(name = "transport-sa", version, about = "Transport trial results to a target population under an adherence ratio")]
struct Cli {
    /// Worker threads for bootstrap, Monte Carlo and simulation loops.
    #[arg(long, global = true, env = "TRANSPORT_SA_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Point estimates, variances and intervals at constant deltas.
    Estimate(RunArgs),
    /// Monte Carlo sensitivity analysis over trapezoid deltas.
    Mc(RunArgs),
    /// Bounds over delta ranges.
    Bounds(RunArgs),
    /// Bias and coverage experiments on a simulated process.
    Simulate(RunArgs),
    /// Print the version.
    Version,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config report path.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn run(command: &Command) -> Result<(), CliError> {
    let (name, args) = match command {
        Command::Version => {
            println!("transport-sa {}", env!("CARGO_PKG_VERSION"));
            return Ok(());
        }
        Command::Estimate(a) => ("estimate", a),
        Command::Mc(a) => ("mc", a),
        Command::Bounds(a) => ("bounds", a),
        Command::Simulate(a) => ("simulate", a),
    };
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.output {
        cfg.output.path = Some(out.clone());
    }
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut report = Report::new(name, &cfg, now)?;
    let path = cfg.output.path.clone();
    match command {
        Command::Estimate(_) => commands::estimate(&cfg, &mut report)?,
        Command::Mc(_) => commands::mc(&cfg, &mut report, path.as_deref())?,
        Command::Bounds(_) => commands::bounds(&cfg, &mut report)?,
        Command::Simulate(_) => commands::simulate(&cfg, &mut report)?,
        Command::Version => unreachable!(),
    }
    log::info!("{} report records", report.records().len());
    report.write(path.as_deref(), cfg.output.format)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
