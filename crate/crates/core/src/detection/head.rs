use serde::{Deserialize, Serialize};

use super::boxes::BoundingBox;
use crate::error::{Error, Result};

/// Raw head output over a `grid_h × grid_w` grid.
///
/// Each cell holds four bin distributions (left, top, right, bottom offsets in
/// stride units, `reg_max + 1` bins each) followed by `num_classes` logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistPrediction {
    pub grid_h: usize,
    pub grid_w: usize,
    pub reg_max: usize,
    pub num_classes: usize,
    /// `[cells · 4 · (reg_max + 1)]`, cell-major then side then bin.
    pub box_logits: Vec<f64>,
    /// `[cells · num_classes]`.
    pub cls_logits: Vec<f64>,
}

impl DistPrediction {
    pub fn new(
        grid_h: usize,
        grid_w: usize,
        reg_max: usize,
        num_classes: usize,
        box_logits: Vec<f64>,
        cls_logits: Vec<f64>,
    ) -> Result<Self> {
        let cells = grid_h * grid_w;
        if box_logits.len() != cells * 4 * (reg_max + 1) || cls_logits.len() != cells * num_classes {
            return Err(Error::dim(
                "DistPrediction",
                &[cells * 4 * (reg_max + 1), cells * num_classes],
                &[box_logits.len(), cls_logits.len()],
            ));
        }
        Ok(Self {
            grid_h,
            grid_w,
            reg_max,
            num_classes,
            box_logits,
            cls_logits,
        })
    }

    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn bins(&self) -> usize {
        self.reg_max + 1
    }

    pub fn side_logits(&self, cell: usize, side: usize) -> &[f64] {
        let n = self.bins();
        let start = (cell * 4 + side) * n;
        &self.box_logits[start..start + n]
    }
}

/// Pixel-space center of grid cell `cell` (row-major).
pub fn cell_center(cell: usize, grid_w: usize, stride: f64) -> (f64, f64) {
    let (gy, gx) = (cell / grid_w, cell % grid_w);
    ((gx as f64 + 0.5) * stride, (gy as f64 + 0.5) * stride)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Expectation of a bin distribution, i.e. the regressed offset in bins.
pub fn expected_offset(probs: &[f64]) -> f64 {
    probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
}

/// Distribution focal loss against a continuous target offset.
///
/// The target is split linearly between its two neighbouring bins. Integer
/// targets reduce to `-ln p(t)`.
pub fn dfl_loss(dist: &[f64], target: f64) -> Result<f64> {
    let (left, wl, wr) = dfl_bins(dist.len(), target)?;
    let mut loss = -wl * dist[left].ln();
    if wr > 0.0 {
        loss -= wr * dist[left + 1].ln();
    }
    Ok(loss)
}

/// `(left bin, left weight, right weight)` for a target over `n` bins.
pub(crate) fn dfl_bins(n: usize, target: f64) -> Result<(usize, f64, f64)> {
    let reg_max = n.saturating_sub(1) as f64;
    if n == 0 || !(0.0..=reg_max).contains(&target) {
        return Err(Error::arg(format!("dfl target {target} outside [0, {reg_max}]")));
    }
    let left = target.floor() as usize;
    let wr = target - left as f64;
    Ok((left, 1.0 - wr, wr))
}

/// Decoded cell: box plus per-class sigmoid scores.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedCell {
    pub bbox: BoundingBox,
    pub scores: Vec<f64>,
}

/// Anchor-free decode: offsets are bin expectations scaled by `stride` around
/// each cell center.
pub fn decode_boxes(pred: &DistPrediction, stride: usize) -> Vec<DecodedCell> {
    let s = stride as f64;
    (0..pred.cells())
        .map(|cell| {
            let (cx, cy) = cell_center(cell, pred.grid_w, s);
            let off: Vec<f64> = (0..4)
                .map(|side| expected_offset(&softmax(pred.side_logits(cell, side))) * s)
                .collect();
            let bbox = BoundingBox {
                x1: cx - off[0],
                y1: cy - off[1],
                x2: cx + off[2],
                y2: cy + off[3],
            };
            let k = pred.num_classes;
            let scores = pred.cls_logits[cell * k..(cell + 1) * k].iter().map(|&l| sigmoid(l)).collect();
            DecodedCell { bbox, scores }
        })
        .collect()
}
