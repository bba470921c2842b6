//! `kronmark`: generate synthetic data, train and evaluate the landmark
//! network, estimate weights, report PCA, and benchmark model cost.
//!
//! Exit codes: 0 success, 1 computation failure, 2 usage error, 3 I/O
//! error, 4 incompatible checkpoint.

mod commands;
mod report;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "kronmark", version, about = "Prawn landmark detection and weight estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct SeedArg {
    /// Random seed; falls back to $KRONMARK_SEED, then 0.
    #[arg(long, env = "KRONMARK_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Gen(GenArgs),
    /// Train the landmark network.
    Train(TrainArgs),
    /// Evaluate landmarks on one split of a dataset.
    Eval(EvalArgs),
    /// Weight estimation reports.
    Weight(WeightArgs),
    /// Principal component analysis of inter-landmark distances.
    Pca(PcaArgs),
    /// Model cost and throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    pub length_min: f64,
    #[arg(long, default_value_t = 140.0)]
    pub length_max: f64,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.6)]
    pub mm_per_px: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Layout {
    /// Stride-2 first layer.
    Default,
    /// Stride 1 throughout with an extra pool.
    Full,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Layout::Default)]
    pub layout: Layout,
    /// KCL order for every layer.
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    /// Multiply the learning rate by 0.001 instead of 0.1 every 50 epochs.
    #[arg(long)]
    pub literal_decay: bool,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint written by `train`; its model config is read from the
    /// `model.json` beside it unless `--model` is given.
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// Seed of the 40/20/40 split; use the training seed.
    #[command(flatten)]
    pub seed: SeedArg,
    /// Decode ground-truth heatmap targets instead of running a network.
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightMode {
    Compare,
    Ablation,
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub mode: WeightMode,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = kronmark::weight::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 5, 10])]
    pub components: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub components: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Model layout, or a JSON file holding a model config.
    #[arg(long, default_value = "default")]
    pub config: String,
    #[arg(long, default_value_t = 320)]
    pub input_size: usize,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(100..))]
    pub passes: u64,
    #[arg(long, default_value_t = 10)]
    pub warmup: u64,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Weight(a) => commands::weight(&a),
        Command::Pca(a) => commands::pca(&a),
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
