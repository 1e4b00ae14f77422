//! `evtboost` command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use evtboost::{Error, ErrorClass};

#[derive(Debug, Parser)]
#[command(name = "evtboost", version, about = "Gradient boosting with extreme-value losses for gridded wildfire data")]
pub struct Cli {
    /// Plaintext log that every run appends one line to.
    #[arg(long, global = true, default_value = "evtboost-run.log")]
    pub run_log: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset.
    Synth(commands::SynthArgs),
    /// Train a single model or a burned-area mixture.
    Train(commands::TrainArgs),
    /// Predict threshold probabilities or raw scores.
    Predict(commands::PredictArgs),
    /// Generate spatially correlated validation folds.
    Cvfolds(commands::CvFoldsArgs),
    /// Cross-validate over tree-count checkpoints.
    Cv(commands::CvArgs),
    /// Bayesian-optimization search over hyperparameters.
    Tune(commands::TuneArgs),
    /// Score threshold predictions against observed responses.
    Score(commands::ScoreArgs),
    /// Partial dependence of a model on one or more features.
    Pdp(commands::PdpArgs),
    /// Gain or coverage importance of a model's features.
    Importance(commands::ImportanceArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Cvfolds(_) => "cvfolds",
            Command::Cv(_) => "cv",
            Command::Tune(_) => "tune",
            Command::Score(_) => "score",
            Command::Pdp(_) => "pdp",
            Command::Importance(_) => "importance",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

/// What a command reports for the run log.
pub struct RunInfo {
    pub config_sha256: String,
    pub seed: u64,
}

fn append_run_log(path: &PathBuf, cmd: &str, info: Option<&RunInfo>, wall_ms: u128, code: u8) {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let (hash, seed) = match info {
        Some(i) => (i.config_sha256.as_str(), i.seed.to_string()),
        None => ("-", "-".to_string()),
    };
    let line = format!("{now} cmd={cmd} config_sha256={hash} seed={seed} wall_ms={wall_ms} exit={code}\n");
    let res = std::fs::OpenOptions::new().create(true).append(true).open(path).and_then(|mut f| f.write_all(line.as_bytes()));
    if let Err(e) = res {
        eprintln!("warning: cannot write run log {}: {e}", path.display());
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let start = Instant::now();
    let name = cli.command.name();
    let result = commands::run(&cli.command);
    let wall = start.elapsed().as_millis();
    match result {
        Ok(info) => {
            append_run_log(&cli.run_log, name, Some(&info), wall, 0);
            ExitCode::SUCCESS
        }
        Err((e, info)) => {
            let code = e.exit_code();
            eprintln!("error: {e}");
            append_run_log(&cli.run_log, name, info.as_ref(), wall, code);
            ExitCode::from(code)
        }
    }
}
