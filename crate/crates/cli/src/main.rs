use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use halfspace_cli::commands::{self, Outcome, RunOptions};
use halfspace_cli::config::ScenarioConfig;

#[derive(Parser)]
#[command(name = "hscalc", version, about = "Ellipticity checks, resolvent scans and trace asymptotics on the half-space")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for the parallel grids (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Accept theta outside (0, 2 pi) for negative controls.
    #[arg(long, global = true)]
    allow_theta_zero: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run (E1), (Pi2), (Pi3); exit 0 on pass, 2 on fail.
    CheckEllipticity {
        #[arg(long)]
        config: PathBuf,
    },
    /// sup over xi' of ||R(xi', mu)|| along the ray.
    ResolventScan {
        #[arg(long)]
        config: PathBuf,
    },
    /// Trace densities over mu and their fitted expansion.
    TraceFit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Dirichlet, Neumann and the configured condition side by side.
    CompareBc {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the acceptance criteria.
    Selftest,
}

fn run(cli: &Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let opts = RunOptions { out: cli.out.clone(), seed: cli.seed, allow_theta_zero: cli.allow_theta_zero };
    match &cli.cmd {
        Cmd::CheckEllipticity { config } => commands::check_ellipticity(&ScenarioConfig::load(config)?, &opts),
        Cmd::ResolventScan { config } => commands::resolvent_scan(&ScenarioConfig::load(config)?, &opts),
        Cmd::TraceFit { config } => commands::trace_fit(&ScenarioConfig::load(config)?, &opts),
        Cmd::CompareBc { config } => commands::compare_bc(&ScenarioConfig::load(config)?, &opts),
        Cmd::Selftest => commands::run_selftest(&opts),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(o) => ExitCode::from(o.code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
