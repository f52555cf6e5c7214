//! `est`: generate synthetic CTR data, train and evaluate EST and
//! full-attention models, run ablations, scaling sweeps and FLOPs reports.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod exit;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "est", version, about = "Efficiently scalable transformer for CTR prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the [data] section.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus metrics.csv.
    Train(TrainArgs),
    /// Score a dataset with a checkpoint.
    Eval(EvalArgs),
    /// Train a variant and the full-attention reference and report the deltas.
    Ablate(AblateArgs),
    /// Train a ladder of depths or widths and fit a power law to the GAUC gains.
    Sweep(SweepArgs),
    /// Analytic FLOPs per layer and in total.
    Flops(FlopsArgs),
    /// Effective rank of each attention block of a full-attention checkpoint.
    AnalyzeAttention(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Binary dataset file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `seed` in [data].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write a flat CSV of all impressions.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub multi_epoch_reset: bool,
    /// Overrides `seed` in [train]; model initialisation derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory for checkpoint.estc, metrics.csv and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Valid,
    Train,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "valid")]
    pub split: SplitArg,
    /// Append a row to this metrics.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `est`, `full` or `full-mask:<BB|BN|NN|NB>` (several joined by `+`).
    #[arg(long)]
    pub variant: String,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Append both runs to this metrics.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Depth,
    Width,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value = "depth")]
    pub axis: Axis,
    /// Comma-separated layer counts or widths.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<usize>,
    #[arg(long, required_unless_present = "selftest")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<u32>,
    /// Training seeds; GAUC is averaged over them.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fit noiseless planted power laws instead of training.
    #[arg(long)]
    pub selftest: bool,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the production-sized shape (6 layers, width 128).
    #[arg(long)]
    pub reference: bool,
    /// Candidates per request; defaults to the data config's value.
    #[arg(long)]
    pub candidates: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    /// Behaviour block limited to the candidate-specific sequence.
    Candidate,
    /// Behaviour block spanning user and candidate sequences.
    All,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Validation requests to average over.
    #[arg(long, default_value_t = 100)]
    pub requests: usize,
    #[arg(long, value_enum, default_value = "candidate")]
    pub scope: ScopeArg,
}

fn run(cli: Cli) -> Result<()> {
    commands::init_threads()?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Flops(a) => commands::flops(&a),
        Command::AnalyzeAttention(a) => commands::analyze_attention(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code(&e))
        }
    }
}
