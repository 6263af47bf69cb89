use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;

#[derive(Debug, Parser)]
#[command(name = "canopy", version, about = "Forest segmentation and deforestation mapping on raster tiles")]
pub struct Cli {
    /// Worker threads for tile-level parallelism (0 = all cores).
    #[arg(long, global = true, env = "CANOPY_WORKERS", default_value_t = 0)]
    pub workers: usize,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Index a dataset directory into a manifest.
    Ingest(IngestArgs),
    /// Write a synthetic dataset in the ingestion layout.
    Synth(SynthArgs),
    /// Train a model; writes a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Map deforestation between two periods.
    Detect(DetectArgs),
    /// Train and test every architecture × scenario pair.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Dataset root laid out as <root>/<period>/<source>/<tile_id>.tif
    #[arg(long)]
    pub root: PathBuf,
    /// Manifest file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also assign train/val/test splits.
    #[arg(long)]
    pub split: bool,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub tiles: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub tile_px: usize,
    #[arg(long, default_value_t = 0.75)]
    pub forest_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    pub cloud_fraction: f64,
    /// Comma-separated period labels.
    #[arg(long, value_delimiter = ',', default_value = "2019,2020")]
    pub periods: Vec<String>,
    /// Share of forest cleared between consecutive periods.
    #[arg(long, default_value_t = 0.02)]
    pub deforestation: f64,
    /// TOML file with generator parameters; its keys override the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Training settings settable from the command line; a config file given
/// with `--config` overrides them key by key.
#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub base_width: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Restrict to these periods (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub periods: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Manifest file or dataset root.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Continue from the run directory's last checkpoint.
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct ModelSource {
    /// Trained checkpoint.
    #[arg(long, conflicts_with = "reference", required_unless_present = "reference")]
    pub checkpoint: Option<PathBuf>,
    /// Use the ground-truth masks as the classifier.
    #[arg(long)]
    pub reference: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelSource,
    /// Manifest file or dataset root.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Periods to report (repeatable); default all.
    #[arg(long = "period")]
    pub periods: Vec<String>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Use every distinct score as a PR threshold instead of 101 uniform ones.
    #[arg(long)]
    pub exact_pr: bool,
    /// Directory for metric report files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub model: ModelSource,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub period_a: String,
    #[arg(long)]
    pub period_b: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Manifest file or dataset root.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sweep TOML (archs, scenarios, [train] table); overrides the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}
