use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "emtomo", version, about = "Defocused electron projection simulation and tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate projection sets for every configured defocus.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Reconstruct a volume from one or more projection sets.
    Reconstruct {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        projections: Vec<PathBuf>,
        /// Ground-truth atom list; enables the error report.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Render image pairs, error maps and axial sections from finished runs.
    Figures {
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run quick numerical health checks.
    Selftest {
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Core(emtomo::Error),
    Config(String),
    Usage(String),
    Selftest(usize),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::Selftest(_) => "selftest",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Selftest(n) => write!(f, "{n} self-test check(s) failed"),
        }
    }
}

impl From<emtomo::Error> for CliError {
    fn from(e: emtomo::Error) -> Self {
        CliError::Core(e)
    }
}

fn load_config(path: Option<&PathBuf>, overrides: &Overrides) -> Result<(RunConfig, Option<String>), CliError> {
    let raw = path
        .map(|p| {
            std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        })
        .transpose()?;
    let mut cfg = match &raw {
        Some(text) => RunConfig::parse(text)?,
        None => RunConfig::default(),
    };
    cfg.apply(overrides);
    cfg.validate()?;
    Ok((cfg, raw))
}

fn init_threads(n: usize) -> Result<(), CliError> {
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, overrides } => {
            let (cfg, raw) = load_config(config.as_ref(), &overrides)?;
            init_threads(cfg.run.threads)?;
            commands::simulate(&cfg, raw.as_deref())?;
        }
        Command::Reconstruct {
            config,
            projections,
            truth,
            overrides,
        } => {
            let (cfg, raw) = load_config(config.as_ref(), &overrides)?;
            init_threads(cfg.run.threads)?;
            commands::reconstruct(&cfg, raw.as_deref(), &projections, truth.as_deref())?;
        }
        Command::Figures { runs, output } => {
            commands::figures(&runs, &output)?;
        }
        Command::Selftest { threads } => {
            init_threads(threads.unwrap_or(0))?;
            let failures = commands::selftest()?;
            if failures > 0 {
                return Err(CliError::Selftest(failures));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            match e {
                CliError::Config(_) | CliError::Usage(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
