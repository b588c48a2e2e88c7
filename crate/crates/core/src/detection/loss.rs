use serde::{Deserialize, Serialize};

use super::assign::{task_aligned_assign, AssignConfig, Assignment};
use super::boxes::{ciou_loss_var, BoxVars, GroundTruth};
use super::head::{cell_center, decode_boxes, dfl_bins, DistPrediction};
use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub bbox: f64,
    pub dfl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 0.5,
            bbox: 7.5,
            dfl: 1.5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub cls: f64,
    pub bbox: f64,
    pub dfl: f64,
}

/// Loss graph for one image.
pub struct DetectionLoss {
    pub total: Var,
    pub components: LossComponents,
    pub assignment: Assignment,
}

/// Head geometry shared by the loss and the decoder.
#[derive(Clone, Copy, Debug)]
pub struct HeadGeometry {
    pub grid_h: usize,
    pub grid_w: usize,
    pub stride: usize,
    pub reg_max: usize,
    pub num_classes: usize,
}

/// Detection loss on the tape, with no objectness term.
///
/// `box_logits` is `[cells·4, reg_max+1]` and `cls_logits` is `[cells, K]`.
/// Classification is mean BCE over every cell and class with soft
/// alignment targets on positives; box and DFL terms average over positives
/// (DFL also over the four sides) and vanish when there are none.
/// The assignment and the soft targets are computed from values and carry
/// no gradient.
pub fn detection_loss_var(
    tape: &Tape,
    box_logits: Var,
    cls_logits: Var,
    geom: HeadGeometry,
    gts: &[GroundTruth],
    assign: &AssignConfig,
    weights: &LossWeights,
) -> Result<DetectionLoss> {
    let cells = geom.grid_h * geom.grid_w;
    let bins = geom.reg_max + 1;
    let k = geom.num_classes;
    if tape.shape(box_logits) != [cells * 4, bins] || tape.shape(cls_logits) != [cells, k] {
        return Err(Error::dim("detection_loss", &tape.shape(box_logits), &tape.shape(cls_logits)));
    }
    if let Some(bad) = gts.iter().find(|g| g.class_id >= k) {
        return Err(Error::arg(format!("gt class {} >= {k}", bad.class_id)));
    }

    let pred = DistPrediction::new(
        geom.grid_h,
        geom.grid_w,
        geom.reg_max,
        k,
        tape.value(box_logits).data().to_vec(),
        tape.value(cls_logits).data().to_vec(),
    )?;
    let decoded = decode_boxes(&pred, geom.stride);
    let stride = geom.stride as f64;
    let centers: Vec<(f64, f64)> = (0..cells).map(|c| cell_center(c, geom.grid_w, stride)).collect();
    let assignment = task_aligned_assign(&decoded, &centers, gts, assign);

    let mut target = vec![0.0; cells * k];
    for (c, g) in assignment.positives() {
        target[c * k + gts[g].class_id] = assignment.target_score[c];
    }
    let probs = tape.sigmoid(cls_logits);
    let cls = tape.bce_loss(probs, &Tensor::new(vec![cells, k], target)?)?;
    let cls_value = tape.item(cls)?;
    let mut total = tape.mul_scalar(cls, weights.cls);

    let positives: Vec<(usize, usize)> = assignment.positives().collect();
    let (mut box_value, mut dfl_value) = (0.0, 0.0);
    if !positives.is_empty() {
        let p = positives.len() as f64;
        let dist = tape.softmax(box_logits, 1)?;
        let bin_values = tape.constant(Tensor::new(vec![bins, 1], (0..bins).map(|b| b as f64).collect())?);
        let offsets = tape.matmul(dist, bin_values)?;
        let side = |s: usize| tape.gather(offsets, &positives.iter().map(|&(c, _)| c * 4 + s).collect::<Vec<_>>());
        let cx = tape.constant(Tensor::from_vec(positives.iter().map(|&(c, _)| centers[c].0).collect()));
        let cy = tape.constant(Tensor::from_vec(positives.iter().map(|&(c, _)| centers[c].1).collect()));
        let pred_boxes = BoxVars {
            x1: tape.sub(cx, tape.mul_scalar(side(0)?, stride))?,
            y1: tape.sub(cy, tape.mul_scalar(side(1)?, stride))?,
            x2: tape.add(cx, tape.mul_scalar(side(2)?, stride))?,
            y2: tape.add(cy, tape.mul_scalar(side(3)?, stride))?,
        };
        let target_boxes: Vec<_> = positives.iter().map(|&(_, g)| gts[g].bbox).collect();
        let bbox = tape.mean(ciou_loss_var(tape, pred_boxes, &target_boxes)?);
        box_value = tape.item(bbox)?;

        let logp = tape.log_softmax(box_logits);
        let mut index = Vec::new();
        let mut w = Vec::new();
        for &(c, g) in &positives {
            let (x, y) = centers[c];
            let b = gts[g].bbox;
            let dists = [(x - b.x1), (y - b.y1), (b.x2 - x), (b.y2 - y)];
            for (s, d) in dists.iter().enumerate() {
                let t = (d / stride).clamp(0.0, geom.reg_max as f64);
                let (left, wl, wr) = dfl_bins(bins, t)?;
                let row = (c * 4 + s) * bins;
                index.push(row + left);
                w.push(wl);
                if wr > 0.0 {
                    index.push(row + left + 1);
                    w.push(wr);
                }
            }
        }
        let picked = tape.gather(logp, &index)?;
        let weighted = tape.mul(picked, tape.constant(Tensor::from_vec(w)))?;
        let dfl = tape.mul_scalar(tape.sum(weighted), -1.0 / (4.0 * p));
        dfl_value = tape.item(dfl)?;

        total = tape.add(total, tape.mul_scalar(bbox, weights.bbox))?;
        total = tape.add(total, tape.mul_scalar(dfl, weights.dfl))?;
    }
    let components = LossComponents {
        total: tape.item(total)?,
        cls: cls_value,
        bbox: box_value,
        dfl: dfl_value,
    };
    Ok(DetectionLoss {
        total,
        components,
        assignment,
    })
}

/// Value-only detection loss for a prediction grid.
pub fn detection_loss(
    pred: &DistPrediction,
    stride: usize,
    gts: &[GroundTruth],
    assign: &AssignConfig,
    weights: &LossWeights,
) -> Result<(LossComponents, Assignment)> {
    let tape = Tape::new();
    let cells = pred.cells();
    let box_logits = tape.constant(Tensor::new(vec![cells * 4, pred.bins()], pred.box_logits.clone())?);
    let cls_logits = tape.constant(Tensor::new(vec![cells, pred.num_classes], pred.cls_logits.clone())?);
    let geom = HeadGeometry {
        grid_h: pred.grid_h,
        grid_w: pred.grid_w,
        stride,
        reg_max: pred.reg_max,
        num_classes: pred.num_classes,
    };
    let out = detection_loss_var(&tape, box_logits, cls_logits, geom, gts, assign, weights)?;
    Ok((out.components, out.assignment))
}
