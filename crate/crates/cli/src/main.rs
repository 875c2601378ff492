//! `ergolq`: batch front end for ergodic linear-quadratic problems.
//!
//! Exit codes: 0 ok, 1 other failure, 2 parse error, 3 dimension error,
//! 4 not stabilizing, 5 regularization diverging.

mod commands;
mod format;
mod problem;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("{0}")]
    NotStabilizing(String),
    #[error("{0}")]
    Diverging(String),
    #[error("{0}")]
    Other(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ergolq::Error> for CliError {
    fn from(e: ergolq::Error) -> Self {
        use ergolq::Error as E;
        match e {
            E::Dimension(_) => CliError::Dimension(e.to_string()),
            E::NonFinite(_) | E::NotSymmetric(_) => CliError::Parse(e.to_string()),
            E::NotStabilizing | E::StabilizerNotFound { .. } => CliError::NotStabilizing(e.to_string()),
            E::Diverging { .. } => CliError::Diverging(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(format!("CSV error: {e}"))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Dimension(_) => 3,
            CliError::NotStabilizing(_) => 4,
            CliError::Diverging(_) => 5,
            CliError::Other(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ergolq", version, about = "Ergodic control of linear SDEs with indefinite quadratic cost")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Problem file (JSON).
    pub file: PathBuf,
    /// Print the normalized problem file and exit.
    #[arg(long)]
    pub dump_normalized: bool,
    /// Machine-readable JSON report instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct StrategyArgs {
    /// Feedback gain, row-major comma-separated (overrides the file).
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<String>,
    /// Offset, comma-separated (overrides the file).
    #[arg(long, allow_hyphen_values = true)]
    pub v: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stabilizer search, cost-block definiteness and certificate attempts.
    Check {
        #[command(flatten)]
        common: Common,
        /// Candidate Pi0 for the certificates, row-major comma-separated.
        #[arg(long, allow_hyphen_values = true)]
        pi0: Option<String>,
    },
    /// Ergodic cost and stationary moments of one strategy.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        strategy: StrategyArgs,
    },
    /// Runs the full classification and reports the verdict.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        pi0: Option<String>,
    },
    /// Value by regularization along a decreasing delta schedule.
    Regularize {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, strictly decreasing deltas (overrides the file).
        #[arg(long)]
        schedule: Option<String>,
        /// Relative tolerance of the convergence test.
        #[arg(long, default_value_t = ergolq::ergodic::DEFAULT_CONV_TOL)]
        tol: f64,
        /// Write `delta,value,theta_norm,v_norm,are_residual` rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Monte-Carlo estimate of the ergodic cost of one strategy.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        strategy: StrategyArgs,
        /// Write `t,x1..xn,cesaro` of path 0 here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Keep every k-th step in the trace.
        #[arg(long, default_value_t = 100)]
        trace_every: usize,
    },
    /// Closed-form classification of the scalar reference families.
    Classify1d {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Check { common, pi0 } => commands::check(&common, pi0.as_deref()),
        Command::Eval { common, strategy } => commands::eval(&common, &strategy),
        Command::Solve { common, pi0 } => commands::solve(&common, pi0.as_deref()),
        Command::Regularize { common, schedule, tol, csv } => {
            commands::regularize(&common, schedule.as_deref(), tol, csv.as_deref())
        }
        Command::Simulate { common, strategy, trace, trace_every } => {
            commands::simulate(&common, &strategy, trace.as_deref(), trace_every)
        }
        Command::Classify1d { common } => commands::classify1d(&common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
