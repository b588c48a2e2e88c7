use serde::{Deserialize, Serialize};

use super::hungarian::{hungarian_match, Assignment};
use super::losses::{binary_mask_loss, binary_mask_loss_var, MaskLossWeights, PROB_FLOOR};
use crate::autograd::{Tape, Tensor, Var};
use crate::data::BinaryMask;
use crate::error::{Error, Result};

/// `N` predicted segments: a distribution over `K` classes plus no-object
/// (last column) and a soft mask each.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationPrediction {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    /// `[N, K+1]`, row-major.
    pub class_probs: Vec<f64>,
    /// `[N, H·W]`, row-major.
    pub masks: Vec<f64>,
}

impl SegmentationPrediction {
    pub fn new(num_classes: usize, height: usize, width: usize, class_probs: Vec<f64>, masks: Vec<f64>) -> Result<Self> {
        let c = num_classes + 1;
        let hw = height * width;
        if hw == 0 || class_probs.len() % c != 0 || masks.len() != class_probs.len() / c * hw {
            return Err(Error::dim("SegmentationPrediction", &[class_probs.len(), c], &[masks.len(), hw]));
        }
        for (i, row) in class_probs.chunks(c).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::arg(format!("query {i}: class distribution sums to {s}")));
            }
        }
        if masks.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::arg("mask values outside [0, 1]"));
        }
        Ok(Self {
            num_classes,
            height,
            width,
            class_probs,
            masks,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.class_probs.len() / (self.num_classes + 1)
    }

    pub fn prob(&self, query: usize, class: usize) -> f64 {
        self.class_probs[query * (self.num_classes + 1) + class]
    }

    pub fn null_prob(&self, query: usize) -> f64 {
        self.prob(query, self.num_classes)
    }

    pub fn mask(&self, query: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.masks[query * hw..(query + 1) * hw]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtSegment {
    pub class_id: usize,
    pub mask: BinaryMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthSegments {
    pub height: usize,
    pub width: usize,
    pub segments: Vec<GtSegment>,
}

impl GroundTruthSegments {
    pub fn new(height: usize, width: usize, segments: Vec<GtSegment>) -> Result<Self> {
        if let Some(s) = segments.iter().find(|s| s.mask.height() != height || s.mask.width() != width) {
            return Err(Error::dim(
                "GroundTruthSegments",
                &[height, width],
                &[s.mask.height(), s.mask.width()],
            ));
        }
        Ok(Self { height, width, segments })
    }

    /// One segment per class present in the label map, ascending class id.
    pub fn from_labels(labels: &crate::data::LabelMap, num_classes: usize) -> Self {
        let segments = (0..num_classes)
            .filter_map(|k| {
                let mask = labels.class_mask(k as u8);
                (!mask.is_empty()).then_some(GtSegment { class_id: k, mask })
            })
            .collect();
        Self {
            height: labels.height,
            width: labels.width,
            segments,
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskClsConfig {
    /// Weight of the no-object term for unmatched queries.
    pub null_weight: f64,
    pub mask: MaskLossWeights,
}

impl Default for MaskClsConfig {
    fn default() -> Self {
        Self {
            null_weight: 0.1,
            mask: MaskLossWeights::default(),
        }
    }
}

/// Matching cost `C[j][i] = −p_i(c_j) + L_mask(m_i, m_j)` for every
/// ground truth `j` and query `i`.
pub fn matching_cost(pred: &SegmentationPrediction, gt: &GroundTruthSegments, cfg: &MaskClsConfig) -> Result<Vec<Vec<f64>>> {
    check_inputs(pred.num_classes, pred.num_queries(), pred.height, pred.width, gt)?;
    gt.segments
        .iter()
        .map(|s| {
            let target = s.mask.to_f64();
            (0..pred.num_queries())
                .map(|i| Ok(-pred.prob(i, s.class_id) + binary_mask_loss(pred.mask(i), &target, &cfg.mask)?))
                .collect()
        })
        .collect()
}

fn check_inputs(k: usize, n: usize, h: usize, w: usize, gt: &GroundTruthSegments) -> Result<()> {
    if gt.height != h || gt.width != w {
        return Err(Error::dim("mask_cls_loss", &[h, w], &[gt.height, gt.width]));
    }
    if gt.len() > n {
        return Err(Error::arg(format!("{} ground-truth segments for {n} queries", gt.len())));
    }
    if let Some(s) = gt.segments.iter().find(|s| s.class_id >= k) {
        return Err(Error::arg(format!("segment class {} >= {k}", s.class_id)));
    }
    Ok(())
}

/// Mask-classification loss on the tape.
///
/// `probs` is `[N, K+1]` with no-object last and `masks` is `[N, H·W]`.
/// Queries are matched to segments on current values; the returned loss is
/// `Σ_j [−ln p_σ(j)(c_j) + L_mask(m_σ(j), m_j)] + w_∅·Σ_{unmatched} −ln p_i(∅)`.
pub fn mask_cls_loss_var(
    tape: &Tape,
    probs: Var,
    masks: Var,
    gt: &GroundTruthSegments,
    cfg: &MaskClsConfig,
) -> Result<(Var, Assignment)> {
    let (ps, ms) = (tape.shape(probs), tape.shape(masks));
    if ps.len() != 2 || ms.len() != 2 || ps[0] != ms[0] || ps[1] < 2 || ms[1] != gt.height * gt.width {
        return Err(Error::dim("mask_cls_loss", &ps, &ms));
    }
    let (n, c) = (ps[0], ps[1]);
    let pred = SegmentationPrediction {
        num_classes: c - 1,
        height: gt.height,
        width: gt.width,
        class_probs: tape.value(probs).data().to_vec(),
        masks: tape.value(masks).data().to_vec(),
    };
    let cost = matching_cost(&pred, gt, cfg)?;
    let assignment = hungarian_match(&cost)?;

    let mut loss: Option<Var> = None;
    let mut acc = |v: Var| -> Result<()> {
        loss = Some(match loss {
            Some(l) => tape.add(l, v)?,
            None => v,
        });
        Ok(())
    };
    if !assignment.is_empty() {
        let idx: Vec<usize> = assignment
            .sigma
            .iter()
            .zip(&gt.segments)
            .map(|(&i, s)| i * c + s.class_id)
            .collect();
        let picked = tape.gather(probs, &idx)?;
        acc(tape.neg(tape.sum(tape.log_clamped(picked, PROB_FLOOR))))?;
        for (&i, s) in assignment.sigma.iter().zip(&gt.segments) {
            let m = tape.row(masks, i)?;
            acc(binary_mask_loss_var(tape, m, &s.mask.to_f64(), &cfg.mask)?)?;
        }
    }
    let unmatched = assignment.unmatched(n);
    if !unmatched.is_empty() && cfg.null_weight != 0.0 {
        let idx: Vec<usize> = unmatched.iter().map(|&i| i * c + c - 1).collect();
        let picked = tape.gather(probs, &idx)?;
        acc(tape.mul_scalar(tape.sum(tape.log_clamped(picked, PROB_FLOOR)), -cfg.null_weight))?;
    }
    let loss = match loss {
        Some(l) => l,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    Ok((loss, assignment))
}

/// Value-only [`mask_cls_loss_var`].
pub fn mask_cls_loss(pred: &SegmentationPrediction, gt: &GroundTruthSegments, cfg: &MaskClsConfig) -> Result<(f64, Assignment)> {
    let n = pred.num_queries();
    let tape = Tape::new();
    let probs = tape.constant(Tensor::new(vec![n, pred.num_classes + 1], pred.class_probs.clone())?);
    let masks = tape.constant(Tensor::new(vec![n, pred.height * pred.width], pred.masks.clone())?);
    let (loss, a) = mask_cls_loss_var(&tape, probs, masks, gt, cfg)?;
    Ok((tape.item(loss)?, a))
}
