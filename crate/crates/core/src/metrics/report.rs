use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detection::{detection_confusion_matrix, map50, normalize_rows, ImageBoxes};
use super::masks::PixelConfusion;
use crate::error::Result;

/// Evaluation summary. Detection runs fill the AP fields, mask runs the
/// IoU/accuracy fields; both fill the confusion matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class_ap50: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map50: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class_iou: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class_accuracy: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_accuracy: Option<f64>,
    /// Global pixel accuracy, background included.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pixel_accuracy: Option<f64>,
    /// `(K+1)×(K+1)`, rows = truth, background last.
    pub confusion: Vec<Vec<u64>>,
    pub confusion_normalized: Vec<Vec<f64>>,
}

impl EvalReport {
    pub fn for_detections(classes: &[String], images: &[ImageBoxes], iou_thr: f64, conf_floor: f64) -> Self {
        let k = classes.len();
        let (per, mean) = map50(images, k);
        let cm = detection_confusion_matrix(images, k, iou_thr, conf_floor);
        Self {
            classes: classes.to_vec(),
            per_class_ap50: Some(per),
            map50: Some(mean),
            confusion_normalized: cm.normalized(),
            confusion: cm.counts,
            ..Default::default()
        }
    }

    pub fn for_masks(classes: &[String], confusion: &PixelConfusion) -> Self {
        let (iou, miou) = confusion.iou();
        let (acc, macc) = confusion.accuracy();
        let rows = confusion.rows();
        Self {
            classes: classes.to_vec(),
            per_class_iou: Some(iou),
            mean_iou: Some(miou),
            per_class_accuracy: Some(acc),
            mean_accuracy: Some(macc),
            pixel_accuracy: Some(confusion.pixel_accuracy()),
            confusion_normalized: normalize_rows(&rows),
            confusion: rows,
            ..Default::default()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per class: `class,ap50,iou,accuracy`; absent values are empty.
    pub fn write_class_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["class", "ap50", "iou", "accuracy"])?;
        let cell = |v: &Option<Vec<Option<f64>>>, k: usize| {
            v.as_ref()
                .and_then(|v| v[k])
                .map(|x| format!("{x:.6}"))
                .unwrap_or_default()
        };
        for (k, name) in self.classes.iter().enumerate() {
            out.write_record([
                name.clone(),
                cell(&self.per_class_ap50, k),
                cell(&self.per_class_iou, k),
                cell(&self.per_class_accuracy, k),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Confusion grid with a header row and a label column; background last.
    pub fn write_confusion_csv<W: Write>(&self, w: W, normalized: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut labels = self.classes.clone();
        labels.push("background".into());
        let mut header = vec!["true\\pred".to_string()];
        header.extend(labels.iter().cloned());
        out.write_record(&header)?;
        for (r, label) in labels.iter().enumerate() {
            let mut row = vec![label.clone()];
            if normalized {
                row.extend(self.confusion_normalized[r].iter().map(|v| format!("{v:.6}")));
            } else {
                row.extend(self.confusion[r].iter().map(u64::to_string));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `report.json`, `per_class.csv`, `confusion.csv` and
    /// `confusion_normalized.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        self.write_class_csv(std::fs::File::create(dir.join("per_class.csv"))?)?;
        self.write_confusion_csv(std::fs::File::create(dir.join("confusion.csv"))?, false)?;
        self.write_confusion_csv(std::fs::File::create(dir.join("confusion_normalized.csv"))?, true)?;
        Ok(())
    }
}
