//! `scenegen`: synthesize data, train the staged model, generate videos and
//! score them.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod io;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "scenegen", version = env!("SCENEGEN_VERSION"), about = "Pose-controlled scene video generation")]
pub struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset.
    SynthData,
    /// Train the frame autoencoder from scratch.
    PretrainAe(DataArgs),
    /// Train the unconditional backbone on encoded clips.
    PretrainBackbone(TrainArgs),
    /// Run one training stage.
    Train(StageArgs),
    /// Generate a video.
    Generate(GenerateArgs),
    /// Score generated frames and poses against a reference.
    Eval(EvalArgs),
    /// Print a checkpoint's header and group digests.
    InspectCheckpoint {
        path: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory written by `synth-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides the configured step count.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Input checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    LrmCcnWarmup,
    LrmCcnIntervals,
    Joint,
    Layout,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_enum)]
    pub stage: StageArg,
    #[command(flatten)]
    pub ablations: AblationArgs,
}

#[derive(Debug, Clone, Copy, Default, Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub no_spatial_cond: bool,
    #[arg(long)]
    pub no_temporal_cond: bool,
    #[arg(long)]
    pub no_depth_input: bool,
    #[arg(long)]
    pub no_depth_loss: bool,
    #[arg(long)]
    pub fix_lrm: bool,
    #[arg(long)]
    pub use_gt_depth_cloud: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Interp,
    Perpetual,
    Layout,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub task: Task,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Two-pass interpolation through `m + 1` coarse anchors.
    #[arg(long, value_name = "M")]
    pub two_pass: Option<usize>,
}

/// Where the input frames and trajectory come from: a dataset record, or a
/// freshly synthesized scene and camera path.
#[derive(Debug, Args)]
pub struct SourceArgs {
    #[arg(long, requires = "record")]
    pub data: Option<PathBuf>,
    /// Record name or index within `--data`.
    #[arg(long)]
    pub record: Option<String>,
    #[arg(long, conflicts_with = "data", default_value_t = 1)]
    pub scene_seed: u64,
    #[arg(long, conflicts_with = "data", default_value = "lawnmower")]
    pub kind: String,
    #[arg(long, conflicts_with = "data", default_value_t = 37)]
    pub length: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory with `frames/` and `poses.json` of the generated video.
    #[arg(long)]
    pub generated: PathBuf,
    /// Directory with the reference `frames/` and `poses.json`.
    #[arg(long)]
    pub reference: PathBuf,
    /// Estimated camera poses of the generated frames (JSON pose list).
    #[arg(long, conflicts_with = "oracle")]
    pub estimated: Option<PathBuf>,
    /// Estimate poses by perturbing the reference with the configured noise.
    #[arg(long)]
    pub oracle: bool,
    /// Checkpoint whose autoencoder provides the latent Fréchet distance.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
