use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::PathBuf;

use clap::Args;
use log::info;
use rayon::prelude::*;
use roadseg_core::data::{default_classes, load_gray};
use roadseg_core::detection::{read_detections_csv, read_ground_truth_csv};
use roadseg_core::metrics::{pooled_matches, pr_curve, EvalReport, ImageBoxes, PixelConfusion};
use serde::Serialize;

use crate::failure::{CliResult, Failure};
use crate::output::{write_run_record, OutDir};

fn check_classes(classes: &Option<Vec<String>>) -> CliResult<Vec<String>> {
    let c = classes.clone().unwrap_or_else(default_classes);
    if c.is_empty() || c.len() > 255 {
        return Err(Failure::config(format!("{} classes; expected 1 to 255", c.len())));
    }
    Ok(c)
}

/// Writes the report files of `report` into `out` and registers them.
fn write_report(out: &mut OutDir, report: &EvalReport) -> CliResult<()> {
    for f in ["report.json", "per_class.csv", "confusion.csv", "confusion_normalized.csv"] {
        out.file(f)?;
    }
    report.write_all(out.root())?;
    Ok(())
}

// ---------------------------------------------------------------- eval-detections

#[derive(Args, Debug)]
pub struct EvalDetectionsArgs {
    /// `image_id,class_id,x1,y1,x2,y2,confidence` rows.
    #[arg(long)]
    pub detections: PathBuf,
    /// `image_id,class_id,x1,y1,x2,y2` rows.
    #[arg(long)]
    pub ground_truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Class names in id order.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// IoU threshold of the confusion matrix.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Detections below this confidence are left out of the confusion matrix.
    #[arg(long, default_value_t = 0.25)]
    pub conf_floor: f64,
}

#[derive(Serialize)]
struct EvalDetectionsConfig {
    detections: PathBuf,
    ground_truth: PathBuf,
    classes: Vec<String>,
    iou: f64,
    conf_floor: f64,
}

pub fn eval_detections(args: &EvalDetectionsArgs, out: &mut OutDir) -> CliResult<()> {
    let classes = check_classes(&args.classes)?;
    if !(0.0..=1.0).contains(&args.iou) || !(0.0..=1.0).contains(&args.conf_floor) {
        return Err(Failure::config("--iou and --conf-floor must lie in [0, 1]"));
    }
    let open = |p: &PathBuf| File::open(p).map_err(|e| Failure::data(format!("{}: {e}", p.display())));
    let dets = read_detections_csv(open(&args.detections)?)?;
    let gts = read_ground_truth_csv(open(&args.ground_truth)?)?;
    let k = classes.len();

    // images in id order
    let mut by_image: BTreeMap<String, ImageBoxes> = BTreeMap::new();
    for (id, d) in dets {
        if d.class_id >= k {
            return Err(Failure::data(format!("detection in {id} has class {} of {k}", d.class_id)));
        }
        by_image.entry(id).or_default().detections.push(d);
    }
    for (id, g) in gts {
        if g.class_id >= k {
            return Err(Failure::data(format!("ground truth in {id} has class {} of {k}", g.class_id)));
        }
        by_image.entry(id).or_default().ground_truth.push(g);
    }
    let images: Vec<ImageBoxes> = by_image.into_values().collect();

    let report = EvalReport::for_detections(&classes, &images, args.iou, args.conf_floor);
    write_report(out, &report)?;
    let mut curves = String::from("class,recall,precision\n");
    for (name, (scored, n)) in classes.iter().zip(pooled_matches(&images, k, 0.5)) {
        for (r, p) in pr_curve(&scored, n) {
            curves.push_str(&format!("{name},{r:.6},{p:.6}\n"));
        }
    }
    out.write("pr_curves.csv", curves)?;
    info!("mAP50 {:.4} over {} images", report.map50.unwrap_or(0.0), images.len());

    let cfg = EvalDetectionsConfig {
        detections: args.detections.clone(),
        ground_truth: args.ground_truth.clone(),
        classes,
        iou: args.iou,
        conf_floor: args.conf_floor,
    };
    write_run_record(out, "eval-detections", &cfg, vec![])
}

// ---------------------------------------------------------------- eval-masks

#[derive(Args, Debug)]
pub struct EvalMasksArgs {
    /// Directory of predicted label maps (PGM or PNG, 255 = background).
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth label maps with the same file names.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
}

#[derive(Serialize)]
struct EvalMasksConfig {
    pred: PathBuf,
    gt: PathBuf,
    classes: Vec<String>,
    images: usize,
}

fn label_files(dir: &PathBuf) -> CliResult<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
    let mut names = vec![];
    for e in entries {
        let e = e?;
        let name = e.file_name().to_string_lossy().into_owned();
        let ext = name.rsplit('.').next().unwrap_or("").to_ascii_lowercase();
        if e.file_type()?.is_file() && ["pgm", "png", "pnm"].contains(&ext.as_str()) {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

pub fn eval_masks(args: &EvalMasksArgs, out: &mut OutDir) -> CliResult<()> {
    let classes = check_classes(&args.classes)?;
    let k = classes.len();
    let names = label_files(&args.gt)?;
    if names.is_empty() {
        return Err(Failure::data(format!("no label maps in {}", args.gt.display())));
    }
    let per: Vec<PixelConfusion> = names
        .par_iter()
        .map(|name| {
            let gt = load_gray(args.gt.join(name))?;
            let pred = load_gray(args.pred.join(name))?;
            if gt.dimensions() != pred.dimensions() {
                return Err(Failure::data(format!(
                    "{name}: prediction is {:?}, ground truth {:?}",
                    pred.dimensions(),
                    gt.dimensions()
                )));
            }
            let mut c = PixelConfusion::new(k);
            c.add(pred.as_raw(), gt.as_raw())
                .map_err(|e| Failure::data(format!("{name}: {e}")))?;
            Ok(c)
        })
        .collect::<CliResult<_>>()?;
    let mut total = PixelConfusion::new(k);
    for c in &per {
        total.merge(c);
    }
    let report = EvalReport::for_masks(&classes, &total);
    write_report(out, &report)?;
    info!(
        "mIoU {:.4}, mean accuracy {:.4} over {} images",
        report.mean_iou.unwrap_or(0.0),
        report.mean_accuracy.unwrap_or(0.0),
        names.len()
    );
    let cfg = EvalMasksConfig {
        pred: args.pred.clone(),
        gt: args.gt.clone(),
        classes,
        images: names.len(),
    };
    write_run_record(out, "eval-masks", &cfg, vec![])
}
