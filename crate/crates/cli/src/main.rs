//! `willems`: run the data-driven trajectory experiments from JSON configs.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 excitation hypothesis
//! violated, 4 infeasible optimization, 5 numerical failure.

mod config;
mod deepc;
mod identify;
mod output;
mod signals;
mod theorem1;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{load, ConfigError, Loaded};
use output::OutputDir;

#[derive(Parser)]
#[command(
    name = "willems",
    version,
    about = "Data-driven trajectory parameterization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the data image and per-state parameterization on generated data.
    #[command(name = "verify-theorem1")]
    VerifyTheorem1(Common),
    /// Closed-loop tracking with MPC, online DeePC, or both.
    Deepc(Common),
    /// Multi-agent identification and the trajectory-count sweep.
    Identify(Common),
    /// Print the excitation order of trajectory inputs.
    CheckPe(Common),
    /// Simulate a system on given inputs and write the trajectory CSV.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file (check-pe also accepts a trajectory CSV).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_USAGE: u8 = 2;
const EXIT_HYPOTHESIS: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<willems::Error>() {
            return match e {
                willems::Error::InvalidInput(_)
                | willems::Error::Parse(_)
                | willems::Error::Io(_) => EXIT_USAGE,
                willems::Error::HypothesisViolated(_) => EXIT_HYPOTHESIS,
                willems::Error::Infeasible(_) => EXIT_INFEASIBLE,
                willems::Error::NonFinite(_) | willems::Error::Numerical(_) => EXIT_NUMERICAL,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_USAGE;
        }
    }
    EXIT_NUMERICAL
}

/// Output directory: `--out`, else the config's `out` (relative to the
/// config file), else the config file's directory.
fn output_dir<T>(
    flag: &Option<PathBuf>,
    cfg: &Loaded<T>,
    field: &Option<String>,
) -> Result<OutputDir> {
    let dir = match (flag, field) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) => cfg.resolve(dir),
        (None, None) => cfg.base.clone(),
    };
    let dir = if dir.as_os_str().is_empty() {
        Path::new(".").to_path_buf()
    } else {
        dir
    };
    OutputDir::create(dir)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::VerifyTheorem1(a) => {
            let cfg = load::<theorem1::Config>(&a.config)?;
            let out = output_dir(&a.out, &cfg, &cfg.config.out)?;
            theorem1::run(&cfg, a.seed.unwrap_or(cfg.config.seed), &out)
        }
        Command::Deepc(a) => {
            let cfg = load::<deepc::Config>(&a.config)?;
            let out = output_dir(&a.out, &cfg, &cfg.config.out)?;
            deepc::run(&cfg, a.seed.unwrap_or(cfg.config.seed), &out)
        }
        Command::Identify(a) => {
            let cfg = load::<identify::Config>(&a.config)?;
            let out = output_dir(&a.out, &cfg, &cfg.config.out)?;
            identify::run(&cfg, a.seed.unwrap_or(cfg.config.seed), &out)
        }
        Command::CheckPe(a) => {
            if a.seed.is_some() || a.out.is_some() {
                log::warn!("check-pe ignores --seed and --out");
            }
            signals::check_pe(&signals::load_pe(&a.config)?)
        }
        Command::Simulate(a) => {
            let cfg = load::<signals::SimulateConfig>(&a.config)?;
            let out = output_dir(&a.out, &cfg, &cfg.config.out)?;
            signals::simulate_cmd(&cfg, a.seed.unwrap_or(cfg.config.seed), &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
