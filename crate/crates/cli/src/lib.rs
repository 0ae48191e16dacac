//! `funsurvey` command line: estimate, bands, montecarlo and oracle-check.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{Context, Outputs};
use crate::config::RunConfig;
pub use crate::error::{CliError, EXIT_NUMERICAL, EXIT_OK, EXIT_ORACLE, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "funsurvey", version, about = "Design-based mean curve estimation for survey samples of curves")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed; a fresh one is generated and reported when absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// File of 0-based sampled unit indices, overriding the random draw.
    #[arg(long, global = true)]
    pub sample: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Estimate the mean curve from one sample.
    Estimate,
    /// Estimate with a simultaneous confidence band.
    Bands,
    /// Repeated-sampling study of the covariance estimator.
    Montecarlo,
    /// Exhaustive enumeration checks on a tiny population.
    OracleCheck,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    if cli.workers == Some(0) {
        return Err(CliError::Validation("--workers must be at least 1".into()));
    }
    let seed = match cli.seed.or(cfg.seed) {
        Some(s) => s,
        None => {
            let s = rand::random::<u64>();
            eprintln!("seed={s}");
            s
        }
    };
    let base = cli
        .config
        .as_ref()
        .and_then(|p| p.parent().map(PathBuf::from))
        .unwrap_or_default();
    let ctx = Context {
        cfg,
        seed,
        base,
        out: cli.out.clone(),
        sample: cli.sample.clone(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Validation(format!("cannot start worker pool: {e}")))?;
    let (outputs, code): (Outputs, i32) = pool.install(|| -> Result<_, CliError> {
        Ok(match cli.command {
            Command::Estimate => (commands::cmd_estimate(&ctx)?, EXIT_OK),
            Command::Bands => (commands::cmd_bands(&ctx)?, EXIT_OK),
            Command::Montecarlo => (commands::cmd_montecarlo(&ctx)?, EXIT_OK),
            Command::OracleCheck => {
                let (out, passed) = commands::cmd_oracle_check(&ctx)?;
                (out, if passed { EXIT_OK } else { EXIT_ORACLE })
            }
        })
    })?;
    outputs.write(&ctx.out)?;
    print!("{}", outputs.summary);
    for name in outputs.names() {
        eprintln!("wrote {}", ctx.out.join(name).display());
    }
    Ok(code)
}
