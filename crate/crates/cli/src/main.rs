use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod data;
mod output;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Model(survsel::error::Error),
}

impl CliError {
    /// 1 for user errors, 2 for numerical failures.
    fn exit_code(&self) -> u8 {
        use survsel::error::Error as E;
        match self {
            CliError::Model(E::RankDeficient | E::NonDifferentiable { .. } | E::SingularPrior | E::Quadrature { .. } | E::Bracket { .. }) => 2,
            _ => 1,
        }
    }
}

/// Bayesian variable selection for survival and probit regression.
#[derive(Parser, Debug)]
#[command(name = "survsel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Posterior model probabilities for a CSV dataset.
    Fit(Common),
    /// Selection metrics over simulated replicates of a scenario.
    Simulate(Common),
    /// Model selection on datasets with permuted responses.
    Permute(Common),
    /// Prior dispersion for a practical-significance threshold.
    Elicit(Common),
    /// Leave-one-out cross-validated concordance index.
    Cv(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Input CSV.
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// Result JSON; side tables go next to it. Stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gibbs iterations `B`.
    #[arg(short = 'B', long = "iterations")]
    iterations: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Any configuration key, e.g. `--set g_M=0.2`. Repeatable.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn resolve(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &c.config {
        cfg.load_file(path)?;
    }
    if let Some(v) = &c.input {
        cfg.input = Some(v.clone());
    }
    if let Some(v) = &c.output {
        cfg.output = Some(v.clone());
    }
    if let Some(v) = &c.backend {
        cfg.set("backend", v)?;
    }
    if let Some(v) = &c.prior {
        cfg.set("prior", v)?;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.iterations {
        cfg.b_iter = v;
    }
    if let Some(v) = c.threads {
        cfg.threads = v;
    }
    for kv in &c.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config(format!("`--set {kv}` is not KEY=VALUE")))?;
        cfg.set(k, v)?;
    }
    if cfg.threads == 0 {
        return Err(CliError::Config("threads must be at least 1".into()));
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (c, f): (&Common, fn(&RunConfig) -> Result<(), CliError>) = match &cli.command {
        Command::Fit(c) => (c, commands::fit),
        Command::Simulate(c) => (c, commands::simulate),
        Command::Permute(c) => (c, commands::permute),
        Command::Elicit(c) => (c, commands::elicit),
        Command::Cv(c) => (c, commands::cv),
    };
    let cfg = resolve(c)?;
    rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    f(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SURVSEL_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
