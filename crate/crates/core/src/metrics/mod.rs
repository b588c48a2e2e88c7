//! Evaluation metrics for boxes and label maps.
//!
//! Aggregates over many images are computed per image in parallel and
//! reduced in input order, so results do not depend on the thread count.

mod detection;
mod masks;
mod report;

pub use detection::{
    ap_from_scored, average_precision, detection_confusion_matrix, map50, map_at, normalize_rows, pooled_matches,
    pr_curve, DetectionConfusion, ImageBoxes,
};
pub use masks::{mask_iou, mean_accuracy, mean_iou, pixel_accuracy, PixelConfusion};
pub use report::EvalReport;
