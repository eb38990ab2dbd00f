//! `ts2img` command-line front end.

mod commands;
mod config;
mod data;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::InputFormat;
use crate::error::EXIT_DOMAIN;

#[derive(Debug, Parser)]
#[command(name = "ts2img", version = ts2img::build_version(), about = "Encode time series as images and run the transfer-learning protocols")]
pub struct Cli {
    /// Flat key=value file overriding built-in defaults; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for data-parallel stages (0 = all cores). Outputs do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a deterministic synthetic dataset.
    Synth(SynthArgs),
    /// Encode windows as GASF, GADF or MTF image stacks (PNG + TSIM per window).
    Encode(EncodeArgs),
    /// Train the 1D CNN on raw windows and report hold-out scores.
    Train(TrainCmd),
    /// Pre-train the 2D image trunk on an encoded or synthetic image task.
    Pretrain2d(PretrainArgs),
    /// Replace the head of a checkpoint and fine-tune it on a target dataset.
    Transfer(TransferArgs),
    /// Train the two-branch image + raw-signal fusion model.
    Fuse(FuseArgs),
    /// Evaluate the 1D CNN with a hold-out split or leave-one-participant-out.
    Eval(EvalArgs),
    /// Print the header of a TSIM tensor, checkpoint or run manifest.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Physiological CSV files, one per participant.
    Physio,
    /// WISDM-format accelerometer text.
    Activity,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: Option<SynthKind>,
    /// Participants (physio) or users (activity). Default 20 / 10.
    #[arg(long)]
    pub participants: Option<usize>,
    /// Class count; 2 uses the stressor preset, anything else the valence preset. Default 2.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Frames per participant (physio) or samples per activity (activity).
    #[arg(long)]
    pub frames: Option<usize>,
    /// Class separability of the physiological generator.
    #[arg(long)]
    pub separability: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// WISDM raw text file, physiological CSV file, or a directory of CSV files.
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    /// Window length in samples. Default 100.
    #[arg(long)]
    pub window: Option<usize>,
    /// Window step in samples. Default 20.
    #[arg(long)]
    pub step: Option<usize>,
    /// Physiological channels, comma-separated. Default: every channel column.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<String>>,
    /// Lowest physiological label; subtracted to give class ids. Default: smallest label present.
    #[arg(long, allow_negative_numbers = true)]
    pub label_base: Option<i64>,
    /// Physiological sample rate in Hz. Default 4.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Keep only the first N users or participants, written like `10users`.
    #[arg(long)]
    pub subset: Option<String>,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    /// Default 10.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Default 128.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// SGD learning rate. Default 0.01.
    #[arg(long)]
    pub lr: Option<f64>,
    /// SGD momentum. Default 0.9.
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Seed for splits, initialisation, shuffling and dropout; falls back to TS2IMG_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hold-out fraction. Default 0.2.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Class count. Default: largest class id present + 1.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// gasf, gadf or mtf. Default gasf.
    #[arg(long)]
    pub method: Option<String>,
    /// MTF quantile bins. Default 8.
    #[arg(long)]
    pub bins: Option<usize>,
    /// rgb_xyz, gray_single or planes_xyza. Default rgb_xyz.
    #[arg(long)]
    pub layout: Option<String>,
    /// Three physiological channels filling the x, y, z planes. Default: the first three.
    #[arg(long, value_delimiter = ',')]
    pub image_channels: Option<Vec<String>>,
    /// Output directory.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Checkpoint manifest to write (`NAME.json` plus `NAME.params/`).
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Directory written by `encode`; without it a synthetic 3-class texture task is used.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Images in the synthetic task. Default 600.
    #[arg(long)]
    pub images: Option<usize>,
    /// Image side of the synthetic task. Default 24.
    #[arg(long)]
    pub side: Option<usize>,
    /// Encoding of the synthetic task. Default gasf.
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Base checkpoint whose head is replaced.
    #[arg(long)]
    pub base: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// `all-but-head` or a count of leading trunk layers. Default all-but-head.
    #[arg(long)]
    pub frozen: Option<String>,
    /// Widths of the new relu dense layers, comma-separated. Default 32.
    #[arg(long, value_delimiter = ',')]
    pub head: Option<Vec<usize>>,
    /// Cap on training windows after the split.
    #[arg(long)]
    pub train_windows: Option<usize>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// 2D trunk checkpoint from `pretrain2d`; its image side must equal the window.
    #[arg(long)]
    pub image_base: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Three channels filling the image planes. Default: the first three.
    #[arg(long, value_delimiter = ',')]
    pub image_channels: Option<Vec<String>>,
    /// gasf, gadf or mtf. Default gasf.
    #[arg(long)]
    pub method: Option<String>,
    /// MTF quantile bins. Default 8.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Joint head relu widths, comma-separated. Default 32.
    #[arg(long, value_delimiter = ',')]
    pub head: Option<Vec<usize>>,
    /// Fine-tune the image trunk instead of keeping it frozen.
    #[arg(long)]
    pub train_image: bool,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Holdout,
    Loocv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(value_enum)]
    pub mode: EvalMode,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Score this checkpoint on the hold-out split instead of training.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Write the report here instead of standard output.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// A `.tsim` tensor, checkpoint manifest or run manifest.
    pub path: PathBuf,
}

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_DOMAIN } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = commands::dispatch(cli, argv) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
