mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunArgs;

#[derive(Debug, Parser)]
#[command(name = "lccm", version, about = "Latent class choice models estimated by EM")]
struct Cli {
    /// Worker threads for restarts and folds (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model and write the model file, summary and convergence log.
    Estimate {
        #[command(flatten)]
        run: RunArgs,
        /// Also compute standard errors.
        #[arg(long)]
        se: bool,
    },
    /// Apply a fitted model to a dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// K-fold cross-validation of the predictive log-likelihood.
    Cv {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        folds: Option<usize>,
        /// Seed for the fold assignment (defaults to --seed).
        #[arg(long)]
        fold_seed: Option<u64>,
    },
    /// Draw a synthetic panel from a parameter file.
    Simulate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; a `.meta` sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Class shares and characteristic means of a fitted model.
    Profile {
        #[arg(long)]
        model: PathBuf,
        /// Training data, required for logit-membership models.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the analytic choice-model gradient with finite differences.
    Gradcheck {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 10)]
        draws: usize,
    },
}

/// Invalid settings or inputs, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Estimation or fold failure, reported with exit code 3.
#[derive(Debug)]
pub struct EstimationError(pub String);

impl std::fmt::Display for EstimationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for EstimationError {}

const EXIT_CONFIG: u8 = 2;
const EXIT_ESTIMATION: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    use lccm::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<EstimationError>() {
            return EXIT_ESTIMATION;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io { .. } => EXIT_IO,
                E::Csv(c) if c.is_io_error() => EXIT_IO,
                E::Factorization { .. } | E::EmptyClass { .. } | E::AllRestartsFailed(_) | E::Optim(_) | E::NonFinite(_) => {
                    EXIT_ESTIMATION
                }
                _ => EXIT_CONFIG,
            };
        }
        if cause.is::<csv::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_ESTIMATION
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Estimate { run, se } => commands::estimate(&run, se, cli.threads),
        Command::Predict { model, data, out } => commands::predict(&model, &data, out.as_deref()),
        Command::Cv { run, folds, fold_seed } => commands::cv(&run, folds, fold_seed, cli.threads),
        Command::Simulate { params, n, t, seed, out } => commands::simulate(&params, n, t, seed, &out),
        Command::Profile { model, data, out } => commands::profile(&model, data.as_deref(), out.as_deref()),
        Command::Gradcheck { run, draws } => commands::gradcheck(&run, draws),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
