mod bev;
mod commands;
mod data;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::data::DataArgs;

/// Object proposals and classification for LiDAR sweeps.
#[derive(Debug, Parser)]
#[command(name = "lidarprop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Propose (and classify) objects in every frame.
    Detect(DetectArgs),
    /// Search the segmentation parameters for the best proposal recall.
    Tune(TuneArgs),
    /// Train the proposal classifier.
    Train(TrainArgs),
    /// Proposal recall and classifier metrics against labels.
    Eval(EvalArgs),
    /// Per-stage timing on a fixed thread count.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Settings file of `key = value` lines.
    #[arg(long, short, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one setting (repeatable); wins over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = settings::parse_override)]
    pub set: Vec<(String, String)>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0: one per core).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Directory for every artifact of the run.
    #[arg(long, short, value_name = "DIR", default_value = "out")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Skip classification; proposals are reported as `unclassified`.
    #[arg(long)]
    pub no_classify: bool,
    /// Also write a bird's-eye-view PNG per frame.
    #[arg(long)]
    pub bev: bool,
    #[arg(long, value_name = "PX", default_value_t = 10.0)]
    pub bev_scale: f64,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub iou: Option<f64>,
    /// Keep the configured minimum-points curve instead of refitting it.
    #[arg(long)]
    pub no_curve: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Labelled frames whose proposals become training samples.
    #[command(flatten)]
    pub data: DataArgs,
    /// Training samples in the binary dataset format.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Generate this many isolated synthetic objects per class.
    #[arg(long, value_name = "N")]
    pub samples: Option<usize>,
    /// Validation samples in the binary dataset format.
    #[arg(long, value_name = "FILE")]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Also write the training samples to `dataset.bin`.
    #[arg(long)]
    pub save_dataset: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub iou: Option<f64>,
    /// Classifier to score; without it only recall is reported.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Score the classifier on these samples instead of frame proposals.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// Include classification of the kept proposals.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Leading frames that run but are not measured.
    #[arg(long)]
    pub warmup: Option<usize>,
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Detect(a) => commands::detect(a),
        Command::Tune(a) => commands::tune(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
