use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{iou, Detection, GroundTruth};

/// Detections and ground truth of one image.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageBoxes {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruth>,
}

/// Visit order: confidence descending, ties by input index.
fn confidence_order(dets: &[&Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    order
}

/// Greedy matching in confidence order; each detection takes the unmatched
/// ground truth of highest IoU at or above `iou_thr` (lowest index on ties).
///
/// Returns, per detection in input order, the matched ground-truth index.
fn greedy_match(dets: &[&Detection], gts: &[&GroundTruth], iou_thr: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    let mut out = vec![None; dets.len()];
    for d in confidence_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let o = iou(&dets[d].bbox, &gt.bbox);
            if o >= iou_thr && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out[d] = Some(g);
        }
    }
    out
}

/// `(confidence, is_true_positive)` pairs of one class in one image.
fn scored_matches(img: &ImageBoxes, class_id: usize, iou_thr: f64) -> (Vec<(f64, bool)>, usize) {
    let dets: Vec<&Detection> = img.detections.iter().filter(|d| d.class_id == class_id).collect();
    let gts: Vec<&GroundTruth> = img.ground_truth.iter().filter(|g| g.class_id == class_id).collect();
    let m = greedy_match(&dets, &gts, iou_thr);
    (dets.iter().zip(m).map(|(d, g)| (d.confidence, g.is_some())).collect(), gts.len())
}

/// Points of the raw precision-recall curve, one per detection in
/// confidence order.
pub fn pr_curve(scored: &[(f64, bool)], num_gt: usize) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0).then(a.cmp(&b)));
    let mut tp = 0usize;
    order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            tp += scored[i].1 as usize;
            let recall = if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 };
            (recall, tp as f64 / (rank + 1) as f64)
        })
        .collect()
}

/// All-point interpolated area under the precision envelope.
pub fn ap_from_scored(scored: &[(f64, bool)], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return if scored.is_empty() { 1.0 } else { 0.0 };
    }
    let curve = pr_curve(scored, num_gt);
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (&(r, _), &p) in curve.iter().zip(&envelope) {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

/// Average precision of single-class detections against ground truth of one
/// image.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> f64 {
    let d: Vec<&Detection> = dets.iter().collect();
    let g: Vec<&GroundTruth> = gts.iter().collect();
    let m = greedy_match(&d, &g, iou_thr);
    let scored: Vec<(f64, bool)> = dets.iter().zip(m).map(|(d, g)| (d.confidence, g.is_some())).collect();
    ap_from_scored(&scored, gts.len())
}

/// Per-class scored detections pooled over images.
pub fn pooled_matches(images: &[ImageBoxes], num_classes: usize, iou_thr: f64) -> Vec<(Vec<(f64, bool)>, usize)> {
    let per_image: Vec<Vec<(Vec<(f64, bool)>, usize)>> = images
        .par_iter()
        .map(|img| (0..num_classes).map(|k| scored_matches(img, k, iou_thr)).collect())
        .collect();
    let mut pooled = vec![(Vec::new(), 0usize); num_classes];
    for img in per_image {
        for (acc, (s, n)) in pooled.iter_mut().zip(img) {
            acc.0.extend(s);
            acc.1 += n;
        }
    }
    pooled
}

/// Per-class AP (`None` for classes without ground truth) and their mean.
pub fn map_at(images: &[ImageBoxes], num_classes: usize, iou_thr: f64) -> (Vec<Option<f64>>, f64) {
    let per: Vec<Option<f64>> = pooled_matches(images, num_classes, iou_thr)
        .iter()
        .map(|(s, n)| (*n > 0).then(|| ap_from_scored(s, *n)))
        .collect();
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (per, mean)
}

pub fn map50(images: &[ImageBoxes], num_classes: usize) -> (Vec<Option<f64>>, f64) {
    map_at(images, num_classes, 0.5)
}

/// Detection confusion counts, rows = true class, columns = predicted class,
/// background last.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionConfusion {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
    pub matched: u64,
    pub unmatched_gt: u64,
    pub unmatched_det: u64,
}

impl DetectionConfusion {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        normalize_rows(&self.counts)
    }
}

pub fn normalize_rows(counts: &[Vec<u64>]) -> Vec<Vec<f64>> {
    counts
        .iter()
        .map(|row| {
            let s: u64 = row.iter().sum();
            row.iter()
                .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                .collect()
        })
        .collect()
}

/// Class-agnostic greedy matching of detections at or above `conf_floor`;
/// a matched pair counts at (gt class, det class), leftovers against
/// background.
pub fn detection_confusion_matrix(images: &[ImageBoxes], num_classes: usize, iou_thr: f64, conf_floor: f64) -> DetectionConfusion {
    let bg = num_classes;
    let per_image: Vec<Vec<(usize, usize)>> = images
        .par_iter()
        .map(|img| {
            let dets: Vec<&Detection> = img.detections.iter().filter(|d| d.confidence >= conf_floor).collect();
            let gts: Vec<&GroundTruth> = img.ground_truth.iter().collect();
            let m = greedy_match(&dets, &gts, iou_thr);
            let mut cells = Vec::new();
            let mut gt_hit = vec![false; gts.len()];
            for (d, g) in dets.iter().zip(&m) {
                match g {
                    Some(g) => {
                        gt_hit[*g] = true;
                        cells.push((gts[*g].class_id, d.class_id));
                    }
                    None => cells.push((bg, d.class_id)),
                }
            }
            for (g, hit) in gts.iter().zip(gt_hit) {
                if !hit {
                    cells.push((g.class_id, bg));
                }
            }
            cells
        })
        .collect();
    let mut out = DetectionConfusion {
        num_classes,
        counts: vec![vec![0; num_classes + 1]; num_classes + 1],
        matched: 0,
        unmatched_gt: 0,
        unmatched_det: 0,
    };
    for (r, c) in per_image.into_iter().flatten() {
        out.counts[r][c] += 1;
        match (r == bg, c == bg) {
            (true, _) => out.unmatched_det += 1,
            (_, true) => out.unmatched_gt += 1,
            _ => out.matched += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::BoundingBox;
    use approx::assert_abs_diff_eq;

    fn bx(x: f64, w: f64) -> BoundingBox {
        BoundingBox::new(x, 0.0, x + w, 10.0).unwrap()
    }

    fn det(x: f64, class_id: usize, confidence: f64) -> Detection {
        Detection {
            bbox: bx(x, 10.0),
            class_id,
            confidence,
        }
    }

    fn gt(x: f64, class_id: usize) -> GroundTruth {
        GroundTruth { bbox: bx(x, 10.0), class_id }
    }

    #[test]
    fn single_match_is_perfect() {
        assert_eq!(average_precision(&[det(0.0, 0, 0.9)], &[gt(0.0, 0)], 0.5), 1.0);
    }

    #[test]
    fn tp_fp_tp_fixture() {
        let dets = [det(0.0, 0, 0.9), det(100.0, 0, 0.8), det(50.0, 0, 0.7)];
        let gts = [gt(0.0, 0), gt(50.0, 0)];
        assert_abs_diff_eq!(average_precision(&dets, &gts, 0.5), 5.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn duplicate_is_false_positive() {
        let dets = [det(0.0, 0, 0.9), det(0.0, 0, 0.8)];
        let curve = pr_curve(&[(0.9, true), (0.8, false)], 1);
        assert_eq!(curve, vec![(1.0, 1.0), (1.0, 0.5)]);
        assert_eq!(average_precision(&dets, &[gt(0.0, 0)], 0.5), 1.0);
        let late = [det(0.0, 0, 0.5), det(0.0, 0, 0.8), det(40.0, 0, 0.6)];
        // order: dup(0.8) TP, far(0.6) FP, dup(0.5) FP -> AP 0.5
        assert_abs_diff_eq!(average_precision(&late, &[gt(0.0, 0), gt(20.0, 0)], 0.5), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn empty_conventions() {
        assert_eq!(average_precision(&[], &[], 0.5), 1.0);
        assert_eq!(average_precision(&[det(0.0, 0, 0.5)], &[], 0.5), 0.0);
        assert_eq!(average_precision(&[], &[gt(0.0, 0)], 0.5), 0.0);
    }

    #[test]
    fn map_examples() {
        let perfect = ImageBoxes {
            detections: vec![det(0.0, 0, 0.9), det(50.0, 1, 0.8)],
            ground_truth: vec![gt(0.0, 0), gt(50.0, 1)],
        };
        assert_eq!(map50(&[perfect], 3).1, 1.0);
        let half = ImageBoxes {
            detections: vec![det(0.0, 0, 0.9)],
            ground_truth: vec![gt(0.0, 0), gt(50.0, 1)],
        };
        let (per, mean) = map50(&[half], 3);
        assert_eq!(per, vec![Some(1.0), Some(0.0), None]);
        assert_eq!(mean, 0.5);
    }

    #[test]
    fn confusion_examples() {
        let img = ImageBoxes {
            detections: vec![det(0.0, 0, 0.9), det(50.0, 1, 0.9)],
            ground_truth: vec![gt(0.0, 0), gt(50.0, 1)],
        };
        let m = detection_confusion_matrix(&[img], 2, 0.5, 0.25);
        assert_eq!(m.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 0]]);

        // crack gt, guardrail prediction at IoU 0.6
        let crack = GroundTruth { bbox: bx(0.0, 10.0), class_id: 0 };
        let pred = Detection {
            bbox: bx(2.5, 10.0),
            class_id: 3,
            confidence: 0.7,
        };
        assert_abs_diff_eq!(iou(&crack.bbox, &pred.bbox), 0.6, epsilon = 1e-12);
        let img = ImageBoxes {
            detections: vec![pred, det(200.0, 1, 0.1)],
            ground_truth: vec![crack, gt(100.0, 2)],
        };
        let m = detection_confusion_matrix(&[img], 4, 0.5, 0.25);
        assert_eq!(m.counts[0][3], 1);
        assert_eq!(m.counts[2][4], 1);
        assert_eq!(m.total(), m.matched + m.unmatched_gt + m.unmatched_det);
        let n = m.normalized();
        assert_eq!(n[0][3], 1.0);
        assert_eq!(n[1].iter().sum::<f64>(), 0.0);
    }
}
