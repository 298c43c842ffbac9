//! `jointscore` command line. Exit codes: 0 success, 1 invalid input,
//! 2 runtime failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jointscore::raster::LimbKind;

#[derive(Parser, Debug)]
#[command(
    name = "jointscore",
    version,
    about = "Radiograph joint detection and damage scoring"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stage; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Limb code: LH, RH, LF or RF.
    #[arg(long, global = true)]
    pub limb: Option<LimbKind>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Zero stage timings so outputs are byte-reproducible.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic dataset (images, masks, scores.csv, boxes.csv).
    Synth {
        /// Overrides `synth.patients`.
        #[arg(long)]
        patients: Option<usize>,
    },
    /// Resize, crop and enhance radiographs.
    Preprocess { images: Vec<PathBuf> },
    /// Limb masks: the U-Net when `--models` has one, else the classic mask.
    Mask {
        images: Vec<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Train networks on a dataset directory and save checkpoints.
    Train {
        what: Model,
        /// Dataset directory in the layout written by `synth`.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory (defaults to `--out`).
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Full pipeline on radiographs; writes per-image reports and a manifest.
    Score {
        images: Vec<PathBuf>,
        #[arg(long, default_value = "models")]
        models: PathBuf,
    },
    /// Compare predicted score CSVs with a truth score CSV.
    Eval {
        /// Truth score CSV.
        #[arg(long)]
        truth: PathBuf,
        /// Predicted score CSV, or a directory of `*.scores.csv` files.
        #[arg(long)]
        pred: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Unet,
    Detector,
    Scorer,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
