use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadseg_core::data::{
    annotation_heatmap, augment_brightness, augment_crop_zoom, augment_saturation, auto_orient, class_histogram,
    load_manifest, load_sample, resize_with_annotations, save_pgm, save_rgb, split_dataset, split_sizes,
    synthetic::synthetic_scene, DatasetManifest, ImageRecord, DEFAULT_SPLIT, MAX_COLOR_DELTA, MAX_ZOOM,
};
use serde::{Deserialize, Serialize};

use crate::config::{self, parse_size};
use crate::failure::{CliResult, Failure};
use crate::output::{write_run_record, OutDir};

/// Directory image paths of `manifest` are relative to.
pub fn image_root(manifest: &Path, images: Option<&Path>) -> PathBuf {
    match images {
        Some(p) => p.to_path_buf(),
        None => manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    }
}

fn file_stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

// ---------------------------------------------------------------- stats

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Heatmap grid as WxH.
    #[arg(long, value_parser = parse_size)]
    pub grid: Option<(u32, u32)>,
}

#[derive(Serialize)]
struct StatsConfig {
    manifest: PathBuf,
    grid: (u32, u32),
}

#[derive(Serialize)]
struct ImbalanceSummary {
    images: usize,
    annotations: usize,
    counts: Vec<u64>,
    shares: Vec<f64>,
    /// Most over least frequent class among classes that occur.
    imbalance_ratio: Option<f64>,
    absent_classes: Vec<String>,
}

pub fn stats(args: &StatsArgs, out: &mut OutDir) -> CliResult<()> {
    let (gw, gh) = args.grid.unwrap_or((64, 64));
    let manifest = load_manifest(&args.manifest)?;
    let counts = class_histogram(&manifest);
    let mut csv = String::from("class_id,class,count\n");
    for (i, (name, c)) in manifest.classes.iter().zip(&counts).enumerate() {
        csv.push_str(&format!("{i},{name},{c}\n"));
    }
    out.write("histogram.csv", csv)?;
    for (i, name) in manifest.classes.iter().enumerate() {
        let h = annotation_heatmap(&manifest, i, gh as usize, gw as usize)?;
        let path = out.file(format!("heatmap_{i}_{name}.pgm"))?;
        save_pgm(h.grid_w, h.grid_h, &h.to_gray(), path)?;
    }
    let total: u64 = counts.iter().sum();
    let present: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    let summary = ImbalanceSummary {
        images: manifest.images.len(),
        annotations: total as usize,
        shares: counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect(),
        imbalance_ratio: match (present.iter().max(), present.iter().min()) {
            (Some(&hi), Some(&lo)) => Some(hi as f64 / lo as f64),
            _ => None,
        },
        absent_classes: manifest
            .classes
            .iter()
            .zip(&counts)
            .filter(|(_, &c)| c == 0)
            .map(|(n, _)| n.clone())
            .collect(),
        counts,
    };
    out.write_json("summary.json", &summary)?;
    info!(
        "{} images, {} annotations, imbalance ratio {:?}",
        summary.images, summary.annotations, summary.imbalance_ratio
    );
    let cfg = StatsConfig {
        manifest: args.manifest.clone(),
        grid: (gw, gh),
    };
    write_run_record(out, "stats", &cfg, vec![])
}

// ---------------------------------------------------------------- split

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, valid and test fractions.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    /// Image directory; defaults to the manifest's directory.
    #[arg(long)]
    pub images: Option<PathBuf>,
}

#[derive(Serialize)]
struct SplitConfig {
    manifest: PathBuf,
    seed: u64,
    ratios: (f64, f64, f64),
    sizes: (usize, usize, usize),
}

/// Paths in the written manifests point at the original images.
fn reanchor(m: &DatasetManifest, root: &Path) -> DatasetManifest {
    let root = root.canonicalize().unwrap_or_else(|_| root.to_path_buf());
    let images = m
        .images
        .iter()
        .map(|r| ImageRecord {
            path: root.join(&r.path).to_string_lossy().into_owned(),
            ..r.clone()
        })
        .collect();
    m.with_images(images)
}

pub fn split(args: &SplitArgs, out: &mut OutDir) -> CliResult<()> {
    let ratios = match args.ratios.as_deref() {
        None => DEFAULT_SPLIT,
        Some(&[a, b, c]) => (a, b, c),
        Some(_) => return Err(Failure::config("--ratios takes exactly three values")),
    };
    let manifest = load_manifest(&args.manifest)?;
    let sizes = split_sizes(manifest.images.len(), ratios).map_err(|e| Failure::config(e.to_string()))?;
    let (train, valid, test) = split_dataset(&manifest, ratios, args.seed)?;
    let root = image_root(&args.manifest, args.images.as_deref());
    for (name, m) in [("train", &train), ("valid", &valid), ("test", &test)] {
        out.write(format!("{name}.json"), reanchor(m, &root).to_json()? + "\n")?;
    }
    info!("split {} images into {}/{}/{}", manifest.images.len(), sizes.0, sizes.1, sizes.2);
    let cfg = SplitConfig {
        manifest: args.manifest.clone(),
        seed: args.seed,
        ratios,
        sizes,
    };
    write_run_record(out, "split", &cfg, vec![])
}

// ---------------------------------------------------------------- augment

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Augmented variants per image.
    #[arg(long)]
    pub copies: Option<usize>,
    /// Largest crop zoom, in [0, 0.2].
    #[arg(long)]
    pub zoom: Option<f64>,
    /// Largest saturation change, in [0, 0.25].
    #[arg(long)]
    pub saturation: Option<f64>,
    /// Largest brightness change, in [0, 0.25].
    #[arg(long)]
    pub brightness: Option<f64>,
    /// Resize every image to WxH before augmenting.
    #[arg(long, value_parser = parse_size)]
    pub resize: Option<(u32, u32)>,
    #[arg(long)]
    pub images: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub seed: u64,
    pub copies: usize,
    pub zoom: f64,
    pub saturation: f64,
    pub brightness: f64,
    pub resize: Option<(u32, u32)>,
    /// Also write the oriented (and resized) source image.
    pub keep_original: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            copies: 1,
            zoom: MAX_ZOOM,
            saturation: MAX_COLOR_DELTA,
            brightness: MAX_COLOR_DELTA,
            resize: None,
            keep_original: true,
        }
    }
}

fn symmetric<R: Rng>(rng: &mut R, max: f64) -> f64 {
    if max == 0.0 {
        0.0
    } else {
        rng.random_range(-max..=max)
    }
}

pub fn augment(args: &AugmentArgs, out: &mut OutDir) -> CliResult<()> {
    let mut cfg: AugmentConfig = config::load(args.config.as_deref())?;
    config::set(&mut cfg.seed, args.seed);
    config::set(&mut cfg.copies, args.copies);
    config::set(&mut cfg.zoom, args.zoom);
    config::set(&mut cfg.saturation, args.saturation);
    config::set(&mut cfg.brightness, args.brightness);
    if args.resize.is_some() {
        cfg.resize = args.resize;
    }
    if !(0.0..=MAX_ZOOM).contains(&cfg.zoom) {
        return Err(Failure::config(format!("zoom {} outside [0, {MAX_ZOOM}]", cfg.zoom)));
    }
    for (name, v) in [("saturation", cfg.saturation), ("brightness", cfg.brightness)] {
        if !(0.0..=MAX_COLOR_DELTA).contains(&v) {
            return Err(Failure::config(format!("{name} {v} outside [0, {MAX_COLOR_DELTA}]")));
        }
    }

    let manifest = load_manifest(&args.manifest)?;
    let root = image_root(&args.manifest, args.images.as_deref());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = vec![];
    let mut stems = std::collections::HashSet::new();
    for rec in &manifest.images {
        let mut sample = auto_orient(&load_sample(&root, rec)?)?;
        if let Some((w, h)) = cfg.resize {
            sample = resize_with_annotations(&sample, w, h)?;
        }
        let mut stem = file_stem(&rec.path);
        if !stems.insert(stem.clone()) {
            stem = format!("{stem}_{}", records.len());
            stems.insert(stem.clone());
        }
        let mut emit = |s: &roadseg_core::data::ImageSample, name: String| -> CliResult<()> {
            let rel = format!("images/{name}.png");
            save_rgb(&s.image, out.file(&rel)?)?;
            records.push(ImageRecord {
                path: rel,
                ..s.record.clone()
            });
            Ok(())
        };
        if cfg.keep_original {
            emit(&sample, stem.clone())?;
        }
        for c in 0..cfg.copies {
            let z = if cfg.zoom == 0.0 { 0.0 } else { rng.random_range(0.0..=cfg.zoom) };
            let s = augment_crop_zoom(&sample, z, &mut rng)?;
            let s = augment_saturation(&s, symmetric(&mut rng, cfg.saturation))?;
            let s = augment_brightness(&s, symmetric(&mut rng, cfg.brightness))?;
            emit(&s, format!("{stem}_aug{c}"))?;
        }
    }
    info!("wrote {} images", records.len());
    out.write("manifest.json", manifest.with_images(records).to_json()? + "\n")?;
    write_run_record(out, "augment", &cfg, vec![])
}

// ---------------------------------------------------------------- synth

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, value_parser = parse_size, default_value = "32x32")]
    pub size: (u32, u32),
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct SynthConfig {
    count: usize,
    size: (u32, u32),
    seed: u64,
}

/// Procedural scenes with polygon annotations, for demos and smoke runs.
pub fn synth(args: &SynthArgs, out: &mut OutDir) -> CliResult<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let base = DatasetManifest::default();
    let k = base.classes.len();
    let mut records = vec![];
    for i in 0..args.count {
        let rel = format!("images/scene_{i:04}.png");
        let s = synthetic_scene(&mut rng, &rel, args.size.0, args.size.1, k);
        save_rgb(&s.image, out.file(&rel)?)?;
        records.push(s.record);
    }
    out.write("manifest.json", base.with_images(records).to_json()? + "\n")?;
    let cfg = SynthConfig {
        count: args.count,
        size: args.size,
        seed: args.seed,
    };
    write_run_record(out, "synth", &cfg, vec![])
}
