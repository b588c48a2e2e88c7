use serde::{Deserialize, Serialize};

use super::boxes::{iou, GroundTruth};
use super::head::DecodedCell;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignConfig {
    pub alpha: f64,
    pub beta: f64,
    pub topk: usize,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 6.0,
            topk: 10,
        }
    }
}

/// Positive cells per ground truth and the per-cell view of the same map.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Positive cell indices of each gt, ascending.
    pub per_gt: Vec<Vec<usize>>,
    /// Owning gt of each cell.
    pub cell_gt: Vec<Option<usize>>,
    /// Alignment `s^α·u^β` of each positive cell with its gt; 0 elsewhere.
    pub alignment: Vec<f64>,
    /// IoU of each positive cell's decoded box with its gt; 0 elsewhere.
    pub overlap: Vec<f64>,
    /// Soft classification target: alignment rescaled so each gt's best
    /// positive reaches that gt's best IoU.
    pub target_score: Vec<f64>,
}

impl Assignment {
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cell_gt.iter().enumerate().filter_map(|(c, g)| g.map(|g| (c, g)))
    }

    pub fn num_positives(&self) -> usize {
        self.cell_gt.iter().filter(|g| g.is_some()).count()
    }
}

/// Task-aligned positive selection.
///
/// For each gt the candidates are cells whose centers lie strictly inside the
/// gt box; the `topk` with the highest `t = s^α·u^β` (ties by lower cell index)
/// become positives. A cell claimed by several gts stays with the one giving it
/// the highest `t` (ties by lower gt index).
pub fn task_aligned_assign(
    cells: &[DecodedCell],
    centers: &[(f64, f64)],
    gts: &[GroundTruth],
    cfg: &AssignConfig,
) -> Assignment {
    let n = cells.len();
    let mut best: Vec<Option<(usize, f64, f64)>> = vec![None; n];
    for (g, gt) in gts.iter().enumerate() {
        let mut cand: Vec<(usize, f64, f64)> = (0..n)
            .filter(|&c| gt.bbox.contains(centers[c].0, centers[c].1))
            .map(|c| {
                let s = cells[c].scores.get(gt.class_id).copied().unwrap_or(0.0);
                let u = iou(&cells[c].bbox, &gt.bbox);
                (c, s.powf(cfg.alpha) * u.powf(cfg.beta), u)
            })
            .collect();
        cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(c, t, u) in cand.iter().take(cfg.topk) {
            match best[c] {
                Some((_, bt, _)) if bt >= t => {}
                _ => best[c] = Some((g, t, u)),
            }
        }
    }

    let mut per_gt = vec![Vec::new(); gts.len()];
    let mut cell_gt = vec![None; n];
    let mut alignment = vec![0.0; n];
    let mut overlap = vec![0.0; n];
    for (c, b) in best.iter().enumerate() {
        if let Some((g, t, u)) = *b {
            per_gt[g].push(c);
            cell_gt[c] = Some(g);
            alignment[c] = t;
            overlap[c] = u;
        }
    }
    let mut target_score = vec![0.0; n];
    for cells_of_gt in &per_gt {
        let max_t = cells_of_gt.iter().map(|&c| alignment[c]).fold(0.0, f64::max);
        let max_u = cells_of_gt.iter().map(|&c| overlap[c]).fold(0.0, f64::max);
        if max_t > 0.0 {
            for &c in cells_of_gt {
                target_score[c] = alignment[c] * max_u / max_t;
            }
        }
    }
    Assignment {
        per_gt,
        cell_gt,
        alignment,
        overlap,
        target_score,
    }
}
