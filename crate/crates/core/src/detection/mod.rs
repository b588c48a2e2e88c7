//! Anchor-free detection head mathematics.
//!
//! The head predicts, per grid cell, four discrete distributions over box
//! offsets plus class logits. This module decodes those predictions, scores
//! them with CIoU / distribution focal / BCE losses after task-aligned
//! positive assignment, and filters final detections with NMS.

mod assign;
mod boxes;
mod head;
mod loss;
mod nms;

pub use assign::{task_aligned_assign, AssignConfig, Assignment};
pub use boxes::{
    ciou_loss, ciou_loss_var, iou, read_detections_csv, read_ground_truth_csv, write_detections_csv,
    write_ground_truth_csv, BoundingBox, BoxVars, Detection, GroundTruth,
};
pub use head::{cell_center, decode_boxes, dfl_loss, expected_offset, sigmoid, softmax, DecodedCell, DistPrediction};
pub use loss::{detection_loss, detection_loss_var, DetectionLoss, HeadGeometry, LossComponents, LossWeights};
pub use nms::{nms, postprocess, DEFAULT_CONF_FLOOR, DEFAULT_IOU_THRESHOLD};

/// Bins per side minus one.
pub const DEFAULT_REG_MAX: usize = 16;
