//! `roadseg`: dataset statistics, splitting, augmentation, GAN and
//! segmentation training, and evaluation. Every run writes its artifacts and
//! a `run.json` snapshot of the resolved configuration into `--out`.

mod config;
mod data_cmds;
mod eval_cmds;
mod failure;
mod output;
mod train_cmds;

use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use crate::failure::{CliResult, Failure};
use crate::output::OutDir;

#[derive(Parser)]
#[command(name = "roadseg", version, about = "Road-distress dataset, training and evaluation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Class histogram, per-class location heatmaps and an imbalance summary.
    Stats(data_cmds::StatsArgs),
    /// Seeded train/valid/test split of a manifest.
    Split(data_cmds::SplitArgs),
    /// Writes oriented, optionally resized and randomly augmented copies.
    Augment(data_cmds::AugmentArgs),
    /// Generates a synthetic annotated dataset.
    Synth(data_cmds::SynthArgs),
    /// Trains the image GAN.
    TrainGan(train_cmds::TrainGanArgs),
    /// Trains the toy mask-classification segmenter.
    TrainSeg(train_cmds::TrainSegArgs),
    /// AP50, mAP50 and confusion matrix of box detections.
    EvalDetections(eval_cmds::EvalDetectionsArgs),
    /// IoU, accuracy and confusion matrix of label maps.
    EvalMasks(eval_cmds::EvalMasksArgs),
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("ROADSEG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::config(format!("ROADSEG_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(e.to_string()))
}

/// Runs `f` against a fresh output directory and removes its files on failure.
fn with_out(root: &Path, inputs: &[&Path], f: impl FnOnce(&mut OutDir) -> CliResult<()>) -> CliResult<()> {
    let mut out = OutDir::create(root, inputs)?;
    match f(&mut out) {
        Ok(()) => Ok(()),
        Err(e) => {
            out.rollback();
            Err(e)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match &cli.command {
        Command::Stats(a) => with_out(&a.out, &[&a.manifest], |o| data_cmds::stats(a, o)),
        Command::Split(a) => with_out(&a.out, &[&a.manifest], |o| data_cmds::split(a, o)),
        Command::Augment(a) => with_out(&a.out, &[&a.manifest], |o| data_cmds::augment(a, o)),
        Command::Synth(a) => with_out(&a.out, &[], |o| data_cmds::synth(a, o)),
        Command::TrainGan(a) => {
            let inputs: Vec<&Path> = a.manifest.iter().chain(&a.config).map(|p| p.as_path()).collect();
            with_out(&a.out, &inputs, |o| train_cmds::train_gan_cmd(a, o))
        }
        Command::TrainSeg(a) => {
            let inputs: Vec<&Path> = a
                .manifest
                .iter()
                .chain(&a.val_manifest)
                .chain(&a.config)
                .map(|p| p.as_path())
                .collect();
            with_out(&a.out, &inputs, |o| train_cmds::train_seg_cmd(a, o))
        }
        Command::EvalDetections(a) => with_out(&a.out, &[&a.detections, &a.ground_truth], |o| {
            eval_cmds::eval_detections(a, o)
        }),
        Command::EvalMasks(a) => with_out(&a.out, &[], |o| eval_cmds::eval_masks(a, o)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{f}");
            ExitCode::from(f.kind.exit_code() as u8)
        }
    }
}
