use super::boxes::{iou, Detection};
use super::head::DecodedCell;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.45;
pub const DEFAULT_CONF_FLOOR: f64 = 0.25;

/// Greedy class-aware NMS.
///
/// Candidates are visited by confidence (descending, ties by input index); a
/// candidate survives unless an already kept box of the same class overlaps it
/// with IoU above `iou_threshold`. Survivors are returned in visit order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = &dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}

/// Best-class detection per decoded cell above `conf_floor`, then NMS.
pub fn postprocess(cells: &[DecodedCell], conf_floor: f64, iou_threshold: f64) -> Vec<Detection> {
    let dets: Vec<Detection> = cells
        .iter()
        .filter_map(|c| {
            let (class_id, &confidence) = c
                .scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
            (confidence >= conf_floor).then_some(Detection {
                bbox: c.bbox,
                class_id,
                confidence,
            })
        })
        .collect();
    nms(&dets, iou_threshold)
}
