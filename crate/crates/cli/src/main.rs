//! `codemix`: prepare data, train, evaluate, predict and compare models.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or input error.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use codemix_core::Error as CoreError;

use crate::config::{Checkpoint, PreprocessFlags};

/// Bad arguments, bad input files or mismatched artifacts (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "codemix",
    version,
    about = "Sentiment classification for code-mixed text"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, clean, deduplicate and split raw corpora.
    Prepare(PrepareArgs),
    /// Train a model on the train split.
    Train(TrainArgs),
    /// Score a trained model on one split.
    Evaluate(EvaluateArgs),
    /// Label new texts with a trained model.
    Predict(PredictArgs),
    /// Compare the test-split evaluations of all evaluated models.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Nb,
    Svm,
    Transformer,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Nb => "nb",
            ModelKind::Svm => "svm",
            ModelKind::Transformer => "transformer",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Nb => "NB",
            ModelKind::Svm => "SVM",
            ModelKind::Transformer => "Transformer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

#[derive(Args)]
pub struct CommonArgs {
    /// Run directory for artifacts.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// JSON file of configuration overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for splits, shuffles, initialization and dropout.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub flags: PreprocessFlags,
}

#[derive(Args)]
pub struct PrepareArgs {
    /// Raw corpus file (JSON lines, or CSV by extension). Repeatable.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// JSON object mapping raw labels to negative/neutral/positive.
    #[arg(long)]
    pub label_map: Option<PathBuf>,
    /// Print the summary as JSON.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Directory holding train/val/test.jsonl; defaults to --out-dir.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Transformer checkpoint to evaluate.
    #[arg(long, value_enum, default_value = "final")]
    pub checkpoint: Checkpoint,
    /// Directory holding the split files; defaults to --out-dir.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Text to label. Repeatable.
    #[arg(long)]
    pub text: Vec<String>,
    /// File with one text per line, or `-` for stdin.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "final")]
    pub checkpoint: Checkpoint,
    /// Print one JSON object per line.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run directory holding eval_<model>_<split>.json files.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Print the comparison as JSON.
    #[arg(long)]
    pub json: bool,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Divergence(_) => 1,
                CoreError::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => 1,
                _ => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return if e.kind() == std::io::ErrorKind::NotFound {
                2
            } else {
                1
            };
        }
        if cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match &cli.command {
        Command::Prepare(a) => commands::prepare::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Evaluate(a) => commands::evaluate::run(a),
        Command::Predict(a) => commands::predict::run(a),
        Command::Report(a) => commands::report::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
