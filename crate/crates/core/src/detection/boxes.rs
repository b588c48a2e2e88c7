use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Axis-aligned box in pixel corner form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x2 >= x1 && y2 >= y1) {
            return Err(Error::arg(format!("inverted box ({x1},{y1},{x2},{y2})")));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Strict interior test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x > self.x1 && x < self.x2 && y > self.y1 && y < self.y2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub class_id: usize,
    pub confidence: f64,
}

/// Ground-truth box with its class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BoundingBox,
    pub class_id: usize,
}

fn intersection(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    w * h
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Complete-IoU loss: `1 - IoU + ρ²/c² + αv`.
///
/// `ρ` is the distance between centers, `c` the diagonal of the smallest
/// enclosing box, `v = 4/π²·(atan(w_t/h_t) - atan(w_p/h_p))²` and
/// `α = v / ((1 - IoU) + v)`. A zero-area enclosing box yields 0.
pub fn ciou_loss(pred: &BoundingBox, target: &BoundingBox) -> f64 {
    let cw = pred.x2.max(target.x2) - pred.x1.min(target.x1);
    let ch = pred.y2.max(target.y2) - pred.y1.min(target.y1);
    let c2 = cw * cw + ch * ch;
    if c2 == 0.0 {
        return 0.0;
    }
    let iou = iou(pred, target);
    let (pcx, pcy) = pred.center();
    let (tcx, tcy) = target.center();
    let rho2 = (pcx - tcx).powi(2) + (pcy - tcy).powi(2);
    let angle = |b: &BoundingBox| {
        if b.width() == 0.0 && b.height() == 0.0 {
            0.0
        } else {
            b.width().atan2(b.height())
        }
    };
    let v = 4.0 / (PI * PI) * (angle(target) - angle(pred)).powi(2);
    let alpha = if v == 0.0 { 0.0 } else { v / ((1.0 - iou) + v) };
    1.0 - iou + rho2 / c2 + alpha * v
}

/// Coordinates of a batch of boxes as tape nodes, each of shape `[P]`.
#[derive(Clone, Copy, Debug)]
pub struct BoxVars {
    pub x1: Var,
    pub y1: Var,
    pub x2: Var,
    pub y2: Var,
}

impl BoxVars {
    pub fn constant(tape: &Tape, boxes: &[BoundingBox]) -> Self {
        let col = |f: fn(&BoundingBox) -> f64| tape.constant(Tensor::from_vec(boxes.iter().map(f).collect()));
        Self {
            x1: col(|b| b.x1),
            y1: col(|b| b.y1),
            x2: col(|b| b.x2),
            y2: col(|b| b.y2),
        }
    }
}

/// Differentiable CIoU loss per box pair, shape `[P]`.
///
/// Same formula as [`ciou_loss`], built from tape primitives so gradients
/// reach the predicted coordinates.
pub fn ciou_loss_var(tape: &Tape, pred: BoxVars, target: &[BoundingBox]) -> Result<Var> {
    let n = target.len();
    let tgt = BoxVars::constant(tape, target);
    let tiny = tape.constant(Tensor::full(&[n], 1e-300));
    let zero = tape.constant(Tensor::zeros(&[n]));

    let pw = tape.sub(pred.x2, pred.x1)?;
    let ph = tape.sub(pred.y2, pred.y1)?;
    let tw = tape.sub(tgt.x2, tgt.x1)?;
    let th = tape.sub(tgt.y2, tgt.y1)?;

    let iw = tape.maximum(tape.sub(tape.minimum(pred.x2, tgt.x2)?, tape.maximum(pred.x1, tgt.x1)?)?, zero)?;
    let ih = tape.maximum(tape.sub(tape.minimum(pred.y2, tgt.y2)?, tape.maximum(pred.y1, tgt.y1)?)?, zero)?;
    let inter = tape.mul(iw, ih)?;
    let union = tape.sub(tape.add(tape.mul(pw, ph)?, tape.mul(tw, th)?)?, inter)?;
    let iou = tape.div(inter, tape.maximum(union, tiny)?)?;

    let cw = tape.sub(tape.maximum(pred.x2, tgt.x2)?, tape.minimum(pred.x1, tgt.x1)?)?;
    let ch = tape.sub(tape.maximum(pred.y2, tgt.y2)?, tape.minimum(pred.y1, tgt.y1)?)?;
    let c2 = tape.add(tape.square(cw), tape.square(ch))?;

    let dx = tape.mul_scalar(tape.sub(tape.add(pred.x1, pred.x2)?, tape.add(tgt.x1, tgt.x2)?)?, 0.5);
    let dy = tape.mul_scalar(tape.sub(tape.add(pred.y1, pred.y2)?, tape.add(tgt.y1, tgt.y2)?)?, 0.5);
    let rho2 = tape.add(tape.square(dx), tape.square(dy))?;
    let dist = tape.div(rho2, tape.maximum(c2, tiny)?)?;

    let dtheta = tape.sub(tape.atan2(tw, th)?, tape.atan2(pw, ph)?)?;
    let v = tape.mul_scalar(tape.square(dtheta), 4.0 / (PI * PI));
    let one_minus_iou = tape.add_scalar(tape.neg(iou), 1.0);
    let alpha = tape.div(v, tape.maximum(tape.add(one_minus_iou, v)?, tiny)?)?;

    let loss = tape.add(tape.add(one_minus_iou, dist)?, tape.mul(alpha, v)?)?;
    // degenerate (zero enclosing box) pairs contribute exactly 0
    let keep: Vec<f64> = tape.value(c2).data().iter().map(|&c| if c == 0.0 { 0.0 } else { 1.0 }).collect();
    tape.mul(loss, tape.constant(Tensor::from_vec(keep)))
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    image_id: String,
    class_id: usize,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    confidence: f64,
}

/// Writes `image_id,class_id,x1,y1,x2,y2,confidence` rows with a header.
pub fn write_detections_csv<W: Write>(w: W, dets: &[(String, Detection)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for (image_id, d) in dets {
        wr.serialize(DetectionRow {
            image_id: image_id.clone(),
            class_id: d.class_id,
            x1: d.bbox.x1,
            y1: d.bbox.y1,
            x2: d.bbox.x2,
            y2: d.bbox.y2,
            confidence: d.confidence,
        })
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_detections_csv<R: Read>(r: R) -> Result<Vec<(String, Detection)>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize::<DetectionRow>()
        .map(|row| {
            let row = row.map_err(csv_err)?;
            if !(0.0..=1.0).contains(&row.confidence) {
                return Err(Error::arg(format!("confidence {} outside [0,1]", row.confidence)));
            }
            Ok((
                row.image_id,
                Detection {
                    bbox: BoundingBox::new(row.x1, row.y1, row.x2, row.y2)?,
                    class_id: row.class_id,
                    confidence: row.confidence,
                },
            ))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthRow {
    image_id: String,
    class_id: usize,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

/// Ground truth uses the detection layout without the confidence column.
pub fn read_ground_truth_csv<R: Read>(r: R) -> Result<Vec<(String, GroundTruth)>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize::<GroundTruthRow>()
        .map(|row| {
            let row = row.map_err(csv_err)?;
            Ok((
                row.image_id,
                GroundTruth {
                    bbox: BoundingBox::new(row.x1, row.y1, row.x2, row.y2)?,
                    class_id: row.class_id,
                },
            ))
        })
        .collect()
}

pub fn write_ground_truth_csv<W: Write>(w: W, gts: &[(String, GroundTruth)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for (image_id, g) in gts {
        wr.serialize(GroundTruthRow {
            image_id: image_id.clone(),
            class_id: g.class_id,
            x1: g.bbox.x1,
            y1: g.bbox.y1,
            x2: g.bbox.x2,
            y2: g.bbox.y2,
        })
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::from(e)
}
