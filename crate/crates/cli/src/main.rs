//! `smartnet` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::commands::{
    AuditArgs, BuiltinArgs, CvArgs, FcsArgs, FitArgs, RocArgs, SimulateArgs, TrialsArgs,
};

#[derive(Parser)]
#[command(
    name = "smartnet",
    version,
    about = "Sparse causal network inference for MAR time series"
)]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true, env = "SMARTNET_THREADS")]
    threads: Option<usize>,

    /// JSON file with option values for the subcommand (flags take
    /// precedence). A previous report is accepted too; its embedded config
    /// is used.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// False connection scores of a model.
    Fcs(FcsArgs),
    /// Finite-sample assumption diagnostics and stationary covariance checks.
    Audit(AuditArgs),
    /// Simulate a model to a CSV time series.
    Simulate(SimulateArgs),
    /// Fit SG or SCSG at one penalty or along a path.
    Fit(FitArgs),
    /// Cross-validate the penalty for each node.
    Cv(CvArgs),
    /// Monte-Carlo support recovery trials.
    Trials(TrialsArgs),
    /// ROC curves of several estimators on one simulated dataset.
    Roc(RocArgs),
    /// Write a builtin example network as a model file.
    Builtin(BuiltinArgs),
}

/// Failure with a stable exit code and a machine-readable record.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: "usage",
            code: 2,
            message: message.into(),
        }
    }
}

impl From<smartnet::Error> for CliError {
    fn from(e: smartnet::Error) -> Self {
        use smartnet::Error as E;
        let (kind, code) = match &e {
            E::Io(_) => ("io", 3),
            E::Parse(_) => ("parse", 4),
            E::InvalidModel(_) => ("invalid_model", 5),
            E::Dimension(_) => ("dimension", 6),
            E::InvalidArgument(_) => ("invalid_argument", 7),
            E::TooShort(_) => ("too_short", 8),
            E::Unstable { .. } | E::StabilityNotReached { .. } => ("unstable", 9),
            E::Diverged { .. }
            | E::Singular { .. }
            | E::ZeroConnection { .. }
            | E::Numerical(_) => ("numerical", 10),
        };
        Self {
            kind,
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        smartnet::Error::Io(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        smartnet::Error::from(e).into()
    }
}

fn report_error(e: &CliError) -> ExitCode {
    let record = json!({ "error": { "kind": e.kind, "code": e.code, "message": e.message } });
    eprintln!("{record}");
    ExitCode::from(e.code)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    let file = cli.config.as_deref().map(config::load).transpose()?;
    let file = file.as_ref();
    match cli.command {
        Command::Fcs(a) => commands::fcs(config::merge("fcs", a, file)?),
        Command::Audit(a) => commands::audit(config::merge("audit", a, file)?),
        Command::Simulate(a) => commands::simulate(config::merge("simulate", a, file)?),
        Command::Fit(a) => commands::fit(config::merge("fit", a, file)?),
        Command::Cv(a) => commands::cv(config::merge("cv", a, file)?),
        Command::Trials(a) => commands::trials(config::merge("trials", a, file)?),
        Command::Roc(a) => commands::roc(config::merge("roc", a, file)?),
        Command::Builtin(a) => commands::builtin(config::merge("builtin", a, file)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return report_error(&CliError::usage(e.kind().to_string()));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}
