mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "hetnet", version, about = "Rate coverage of two-tier multi-antenna HetNets with interference nulling")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set bias_db=10` or
    /// `--set experiment.taus=[1e5,1e6]`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Monte Carlo trials per configuration.
    #[arg(long, global = true)]
    trials: Option<usize>,

    /// Base seed; required whenever Monte Carlo runs.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// `fast` (effective gains) or `full` (explicit channels).
    #[arg(long, global = true)]
    fidelity: Option<String>,

    /// Directory for the CSV and JSON outputs (default `out`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Exact and mean-load rate coverage curves.
    Analytic,
    /// Monte Carlo coverage report.
    Simulate,
    /// Optimal IN degrees of freedom per threshold.
    OptimizeU,
    /// Optimal ABS fraction per threshold (Monte Carlo).
    OptimizeAbs,
    /// IN with U*, U = 0 and ABS with eta* over a bias grid.
    SweepBias,
    /// Analytic vs Monte Carlo cross-check.
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Analytic => "analytic",
            Command::Simulate => "simulate",
            Command::OptimizeU => "optimize-u",
            Command::OptimizeAbs => "optimize-abs",
            Command::SweepBias => "sweep-bias",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(config::ConfigError),
    Numeric(String),
    Io(std::io::Error),
}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<hetnet_core::Error> for CliError {
    fn from(e: hetnet_core::Error) -> Self {
        use hetnet_core::Error as E;
        match e {
            E::Config { field, reason } => CliError::Config(config::ConfigError { field, reason }),
            E::EmptyTier(tier) => CliError::Config(config::ConfigError {
                field: format!("{tier}_density"),
                reason: e.to_string(),
            }),
            E::InsufficientWindow(_) => CliError::Config(config::ConfigError {
                field: "window_radius".into(),
                reason: e.to_string(),
            }),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut overrides = cli.set.clone();
    if let Some(t) = cli.trials {
        overrides.push(format!("experiment.trials={t}"));
    }
    if let Some(s) = cli.seed {
        overrides.push(format!("experiment.seed={s}"));
    }
    if let Some(f) = &cli.fidelity {
        overrides.push(format!("experiment.fidelity=\"{f}\""));
    }
    if let Some(d) = &cli.out_dir {
        overrides.push(format!("experiment.out_dir={:?}", d.display().to_string()));
    }
    let result = config::load(cli.config.as_deref(), &overrides)
        .map_err(CliError::from)
        .and_then(|cfg| commands::run(cli.command.name(), &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(CliError::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
