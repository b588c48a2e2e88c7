use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use roadseg_core::autograd::checkpoint;
use roadseg_core::data::{
    load_manifest, load_sample, record_label_map, resize_with_annotations, save_pgm, save_rgb,
    synthetic::synthetic_scene, ImageSample,
};
use roadseg_core::gan::{sample, sample_grid, striped_images, tensor_to_rgb, train_gan, write_step_log_csv, GanConfig, Generator};
use roadseg_core::segmentation::{
    build_toy_maskformer, semantic_inference, train_seg, write_epoch_log_csv, MaskFormerConfig, SegSample,
    TrainSegConfig,
};
use serde::{Deserialize, Serialize};

use crate::config;
use crate::data_cmds::image_root;
use crate::failure::{CliResult, Failure};
use crate::output::{write_run_record, OutDir};

/// Learning rate the segmentation trainer defaults to.
const REFERENCE_SEG_LR: f64 = 5e-5;

/// Images of `manifest`, resized to `width × height`.
fn load_resized(manifest: &Path, images: Option<&Path>, width: u32, height: u32) -> CliResult<Vec<ImageSample>> {
    let m = load_manifest(manifest)?;
    let root = image_root(manifest, images);
    m.images
        .par_iter()
        .map(|rec| {
            let s = load_sample(&root, rec)?;
            if (s.record.width, s.record.height) == (width, height) {
                Ok(s)
            } else {
                Ok(resize_with_annotations(&s, width, height)?)
            }
        })
        .collect()
}

// ---------------------------------------------------------------- train-gan

#[derive(Args, Debug)]
pub struct TrainGanArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training images; without it a synthetic striped set is used.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Size of the synthetic striped set.
    #[arg(long)]
    pub stripes: Option<usize>,
    /// Images per sample grid.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainGanConfig {
    pub model: GanConfig,
    pub stripes: usize,
    pub samples: usize,
    /// Write checkpoints and a sample grid every this many epochs.
    pub checkpoint_every: usize,
}

impl Default for TrainGanConfig {
    fn default() -> Self {
        Self {
            model: GanConfig::default(),
            stripes: 64,
            samples: 16,
            checkpoint_every: 1,
        }
    }
}

fn write_grid(out: &mut OutDir, rel: &str, g: &Generator, n: usize, seed: u64) -> CliResult<()> {
    if n == 0 {
        return Ok(());
    }
    let imgs = sample(g, n, seed)?
        .iter()
        .map(tensor_to_rgb)
        .collect::<roadseg_core::Result<Vec<_>>>()?;
    let cols = (n as f64).sqrt().ceil() as usize;
    save_rgb(&sample_grid(&imgs, cols)?, out.file(rel)?)?;
    Ok(())
}

pub fn train_gan_cmd(args: &TrainGanArgs, out: &mut OutDir) -> CliResult<()> {
    let mut cfg: TrainGanConfig = config::load(args.config.as_deref())?;
    config::set(&mut cfg.model.seed, args.seed);
    config::set(&mut cfg.model.epochs, args.epochs);
    config::set(&mut cfg.model.batch_size, args.batch_size);
    config::set(&mut cfg.stripes, args.stripes);
    config::set(&mut cfg.samples, args.samples);
    if args.max_steps.is_some() {
        cfg.model.max_steps = args.max_steps;
    }
    cfg.model.validate()?;
    if cfg.checkpoint_every == 0 {
        return Err(Failure::config("checkpoint_every must be positive"));
    }
    let (h, w) = cfg.model.image_size;
    let images = match &args.manifest {
        Some(m) => load_resized(m, args.images.as_deref(), w as u32, h as u32)?
            .iter()
            .map(ImageSample::to_tensor)
            .collect(),
        None => striped_images(&mut ChaCha8Rng::seed_from_u64(cfg.model.seed), cfg.stripes, h, w),
    };
    info!("training on {} images of {w}x{h}", images.len());

    let every = cfg.checkpoint_every;
    let (n, seed) = (cfg.samples, cfg.model.seed);
    // the callback can only return core errors; keep the CLI failure aside
    let mut failed: Option<Failure> = None;
    let result = train_gan(&images, &cfg.model, |epoch, t| {
        if epoch % every != 0 {
            return Ok(());
        }
        let mut save = || -> CliResult<()> {
            let dir = "checkpoints";
            checkpoint::save(out.file(format!("{dir}/generator_epoch_{epoch:03}.ckpt"))?, t.generator.params.tensors())?;
            checkpoint::save(out.file(format!("{dir}/discriminator_epoch_{epoch:03}.ckpt"))?, &t.discriminator.state())?;
            write_grid(out, &format!("samples/epoch_{epoch:03}.ppm"), &t.generator, n, seed)
        };
        if let Err(f) = save() {
            failed = Some(f);
            return Err(roadseg_core::Error::Argument("epoch output failed".into()));
        }
        info!("epoch {epoch} done after {} steps", t.steps);
        Ok(())
    });
    if let Some(f) = failed {
        return Err(f);
    }
    let outcome = result?;

    let mut log = BufWriter::new(File::create(out.file("log.csv")?)?);
    write_step_log_csv(&mut log, &outcome.log)?;
    drop(log);
    checkpoint::save(out.file("generator.ckpt")?, outcome.generator.params.tensors())?;
    checkpoint::save(out.file("discriminator.ckpt")?, &outcome.discriminator.state())?;
    write_grid(out, "samples/final.ppm", &outcome.generator, n, seed)?;
    if let Some(r) = outcome.log.last() {
        info!(
            "{} steps, final d_loss {:.4}, g_loss {:.4}, fake score {:.3}",
            outcome.log.len(),
            r.d_loss,
            r.g_loss,
            r.fake_score
        );
    }
    write_run_record(out, "train-gan", &cfg, vec![])
}

// ---------------------------------------------------------------- train-seg

#[derive(Args, Debug)]
pub struct TrainSegArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training images; without it synthetic scenes are used.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    /// Image directory of both manifests; defaults to each manifest's directory.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Number of synthetic training scenes.
    #[arg(long)]
    pub synthetic: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSegCmdConfig {
    pub model: MaskFormerConfig,
    pub train: TrainSegConfig,
    /// Seeds the weights.
    pub init_seed: u64,
    pub synthetic: usize,
}

impl Default for TrainSegCmdConfig {
    fn default() -> Self {
        Self {
            model: MaskFormerConfig::default(),
            train: TrainSegConfig::default(),
            init_seed: 1,
            synthetic: 10,
        }
    }
}

fn to_seg(samples: &[ImageSample]) -> CliResult<Vec<SegSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(SegSample {
                image: s.to_tensor(),
                labels: record_label_map(&s.record)?,
            })
        })
        .collect()
}

fn pgm_name(s: &ImageSample, i: usize) -> String {
    let stem = Path::new(&s.record.path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{i:04}_{stem}.pgm")
}

pub fn train_seg_cmd(args: &TrainSegArgs, out: &mut OutDir) -> CliResult<()> {
    let mut cfg: TrainSegCmdConfig = config::load(args.config.as_deref())?;
    config::set(&mut cfg.train.seed, args.seed);
    config::set(&mut cfg.train.epochs, args.epochs);
    config::set(&mut cfg.train.batch_size, args.batch_size);
    config::set(&mut cfg.train.adam.lr, args.lr);
    config::set(&mut cfg.synthetic, args.synthetic);
    if args.max_steps.is_some() {
        cfg.train.max_steps = args.max_steps;
    }
    cfg.model.validate()?;
    let (w, h) = (cfg.model.image_width as u32, cfg.model.image_height as u32);
    let k = cfg.model.num_classes;

    let train_samples = match &args.manifest {
        Some(m) => load_resized(m, args.images.as_deref(), w, h)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            (0..cfg.synthetic)
                .map(|i| synthetic_scene(&mut rng, &format!("scene_{i:04}.png"), w, h, k))
                .collect()
        }
    };
    let val_samples = match &args.val_manifest {
        Some(m) => load_resized(m, args.images.as_deref(), w, h)?,
        None => vec![],
    };
    for s in train_samples.iter().chain(&val_samples) {
        if let Some(a) = s.record.annotations.iter().find(|a| a.class_id >= k) {
            return Err(Failure::data(format!("{}: class {} but the model has {k}", s.record.path, a.class_id)));
        }
    }
    let (train, val) = (to_seg(&train_samples)?, to_seg(&val_samples)?);
    info!("training on {} images, validating on {}", train.len(), val.len());

    let model = build_toy_maskformer(cfg.model, &mut ChaCha8Rng::seed_from_u64(cfg.init_seed))?;
    let outcome = train_seg(model, &train, &val, &cfg.train)?;

    write_epoch_log_csv(BufWriter::new(File::create(out.file("epoch_log.csv")?)?), &outcome.log)?;
    checkpoint::save(out.file("best.ckpt")?, &outcome.best_params)?;
    checkpoint::save(out.file("final.ckpt")?, outcome.model.params.tensors())?;

    // masks of the best checkpoint on the validation images
    let mut best = outcome.model.clone();
    best.params.load_from(&outcome.best_params)?;
    let (eval_samples, eval_seg) = if val.is_empty() {
        (&train_samples, &train)
    } else {
        (&val_samples, &val)
    };
    let preds: Vec<Vec<u8>> = eval_seg
        .par_iter()
        .map(|s| Ok(semantic_inference(&best.predict(&s.image)?).labels))
        .collect::<roadseg_core::Result<_>>()?;
    for (i, (s, p)) in eval_samples.iter().zip(&preds).enumerate() {
        let name = pgm_name(s, i);
        save_pgm(w as usize, h as usize, p, out.file(format!("predictions/{name}"))?)?;
        save_pgm(w as usize, h as usize, &eval_seg[i].labels.labels, out.file(format!("ground_truth/{name}"))?)?;
    }

    let best_row = &outcome.log[outcome.best_epoch];
    let last = outcome.log.last().expect("log has the initial row");
    out.write_json(
        "summary.json",
        &serde_json::json!({
            "best_epoch": outcome.best_epoch,
            "best": best_row,
            "final": last,
            "steps": last.steps,
        }),
    )?;
    info!(
        "best epoch {} (val loss {:.4}, mIoU {:.3}); final mIoU {:.3}",
        outcome.best_epoch, best_row.val_loss, best_row.miou, last.miou
    );

    let mut deviations = vec![];
    if cfg.train.adam.lr != REFERENCE_SEG_LR {
        deviations.push(format!(
            "learning rate {} instead of the reference {REFERENCE_SEG_LR}",
            cfg.train.adam.lr
        ));
    }
    write_run_record(out, "train-seg", &cfg, deviations)
}
