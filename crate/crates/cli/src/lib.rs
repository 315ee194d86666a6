//! Command-line driver: dataset synthesis, training, evaluation, plotting,
//! gradient checking and latency benchmarking.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "exitnet", version, about = "Early-exit ensembles for per-time-point EEG artifact segmentation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Default, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker cap. Recorded in the effective config.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Vanilla,
    Mcdrop,
    #[value(name = "early_exit", alias = "early-exit")]
    EarlyExit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    #[default]
    Test,
}

impl SplitArg {
    pub fn file_name(self) -> &'static str {
        match self {
            SplitArg::Train => "train.e4gd",
            SplitArg::Val => "val.e4gd",
            SplitArg::Test => "test.e4gd",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate, preprocess, segment, augment and split a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model on a synthesized dataset.
    Train(TrainArgs),
    /// Classification and uncertainty metrics for one or more checkpoints.
    Eval(EvalArgs),
    /// Plot per-exit predictions for one segment.
    Predict(PredictArgs),
    /// Finite-difference check of every differentiable op.
    Gradcheck(GradcheckArgs),
    /// Inference latency of several checkpoints relative to the first.
    Bench(BenchArgs),
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub patients: Option<u32>,
    #[arg(long)]
    pub minutes: Option<f64>,
    #[arg(long)]
    pub channels: Option<u32>,
    /// Probability that a window carries an artifact, spread evenly over kinds.
    #[arg(long)]
    pub artifact_rate: Option<f64>,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Dropout probability of the mcdrop variant.
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Stochastic passes; mcdrop checkpoints only.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
}

#[derive(Clone, Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub index: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
}

#[derive(Clone, Debug, Args)]
pub struct GradcheckArgs {
    /// Add a case with a deliberately wrong backward rule.
    #[arg(long)]
    pub include_faulty: bool,
}

#[derive(Clone, Debug, Args)]
pub struct BenchArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Also write the table and effective config here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Creates `dir`, refusing a non-empty existing directory unless `force`.
pub fn prepare_output_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let occupied = !dir.is_dir() || std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?.next().is_some();
        if occupied && !force {
            return Err(CliError::Exists(dir.to_path_buf()));
        }
        if !dir.is_dir() {
            return Err(CliError::Config(format!("{} is not a directory", dir.display())));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Runs a parsed command line, writing the human-readable result to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> CliResult<()> {
    commands::dispatch(cli, out)
}
