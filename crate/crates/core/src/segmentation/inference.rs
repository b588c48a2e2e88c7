use super::mask_cls::SegmentationPrediction;
use crate::data::{LabelMap, BACKGROUND};

/// Scores below this leave a pixel unlabeled.
pub const BACKGROUND_THRESHOLD: f64 = 0.5;

/// Per-pixel `argmax_k Σ_i p_i(k)·m_i`; background below [`BACKGROUND_THRESHOLD`].
pub fn semantic_inference(pred: &SegmentationPrediction) -> LabelMap {
    semantic_inference_with(pred, BACKGROUND_THRESHOLD)
}

/// [`semantic_inference`] with an explicit background threshold.
///
/// Ties go to the lowest class id.
pub fn semantic_inference_with(pred: &SegmentationPrediction, threshold: f64) -> LabelMap {
    let k = pred.num_classes;
    let hw = pred.height * pred.width;
    let mut scores = vec![0.0; k * hw];
    for i in 0..pred.num_queries() {
        let m = pred.mask(i);
        for c in 0..k {
            let p = pred.prob(i, c);
            if p == 0.0 {
                continue;
            }
            for (s, &mv) in scores[c * hw..(c + 1) * hw].iter_mut().zip(m) {
                *s += p * mv;
            }
        }
    }
    let labels = (0..hw)
        .map(|px| {
            let (best, score) = (0..k).fold((BACKGROUND, f64::NEG_INFINITY), |acc, c| {
                let s = scores[c * hw + px];
                if s > acc.1 {
                    (c as u8, s)
                } else {
                    acc
                }
            });
            if score < threshold {
                BACKGROUND
            } else {
                best
            }
        })
        .collect();
    LabelMap {
        height: pred.height,
        width: pred.width,
        labels,
    }
}
