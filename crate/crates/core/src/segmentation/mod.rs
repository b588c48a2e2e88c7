//! Query-based mask classification.
//!
//! A small segmenter predicts `N` (class distribution, soft mask) pairs per
//! image. Training matches them one-to-one to ground-truth segments with the
//! Hungarian algorithm; inference folds them into a per-pixel label map.

mod hungarian;
mod inference;
mod losses;
mod mask_cls;
mod model;
mod train;

pub use hungarian::{hungarian_match, Assignment};
pub use inference::{semantic_inference, semantic_inference_with, BACKGROUND_THRESHOLD};
pub use losses::{
    binary_mask_loss, binary_mask_loss_var, per_pixel_ce, per_pixel_ce_mean, per_pixel_ce_var, MaskLossWeights,
    PROB_FLOOR,
};
pub use mask_cls::{
    mask_cls_loss, mask_cls_loss_var, matching_cost, GroundTruthSegments, GtSegment, MaskClsConfig,
    SegmentationPrediction,
};
pub use model::{build_toy_maskformer, masks_from_embeddings, MaskFormer, MaskFormerConfig, MaskFormerOutput};
pub use train::{evaluate_seg, seg_step, train_seg, write_epoch_log_csv, EpochLog, SegSample, TrainSegConfig, TrainSegOutcome};
