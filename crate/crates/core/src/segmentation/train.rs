use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inference::semantic_inference;
use super::mask_cls::{mask_cls_loss_var, GroundTruthSegments, MaskClsConfig, SegmentationPrediction};
use super::model::MaskFormer;
use crate::autograd::{AdamConfig, AdamState, Tape, Tensor};
use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::metrics::PixelConfusion;

/// One training image: `[C, H, W]` pixels in `[0, 1]` and its label map.
#[derive(Clone, Debug)]
pub struct SegSample {
    pub image: Tensor,
    pub labels: LabelMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSegConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stops early once this many optimizer steps have run.
    pub max_steps: Option<usize>,
    pub adam: AdamConfig,
    pub loss: MaskClsConfig,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainSegConfig {
    fn default() -> Self {
        Self {
            epochs: 35,
            batch_size: 4,
            max_steps: None,
            adam: AdamConfig::default(),
            loss: MaskClsConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(skip)]
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(rename = "mIoU")]
    pub miou: f64,
    pub mean_acc: f64,
}

pub struct TrainSegOutcome {
    pub model: MaskFormer,
    /// Row 0 scores the initial weights; row `e` follows epoch `e`.
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_params: BTreeMap<String, Tensor>,
}

/// Mean mask-classification loss and pixel confusion of `model` over
/// `samples`, evaluated in parallel and reduced in sample order.
pub fn evaluate_seg(model: &MaskFormer, samples: &[SegSample], loss: &MaskClsConfig) -> Result<(f64, PixelConfusion)> {
    let k = model.config.num_classes;
    let per: Vec<(f64, PixelConfusion)> = samples
        .par_iter()
        .map(|s| {
            let tape = Tape::new();
            let p = model.params.bind_frozen(&tape);
            let out = model.forward(&tape, &p, tape.constant(s.image.clone()))?;
            let gt = GroundTruthSegments::from_labels(&s.labels, k);
            let (l, _) = mask_cls_loss_var(&tape, out.probs, out.masks, &gt, loss)?;
            let pred = SegmentationPrediction::new(
                k,
                s.labels.height,
                s.labels.width,
                tape.value(out.probs).data().to_vec(),
                tape.value(out.masks).data().to_vec(),
            )?;
            let mut c = PixelConfusion::new(k);
            c.add(&semantic_inference(&pred).labels, &s.labels.labels)?;
            Ok((tape.item(l)?, c))
        })
        .collect::<Result<_>>()?;
    let mut conf = PixelConfusion::new(k);
    let mut total = 0.0;
    for (l, c) in &per {
        total += l;
        conf.merge(c);
    }
    Ok((total / samples.len().max(1) as f64, conf))
}

/// One optimizer step on a batch; returns the mean batch loss.
pub fn seg_step(model: &mut MaskFormer, adam: &mut AdamState, batch: &[&SegSample], loss: &MaskClsConfig) -> Result<f64> {
    let k = model.config.num_classes;
    let tape = Tape::new();
    let p = model.params.bind(&tape);
    let mut total = None;
    for s in batch {
        let out = model.forward(&tape, &p, tape.constant(s.image.clone()))?;
        let gt = GroundTruthSegments::from_labels(&s.labels, k);
        let (l, _) = mask_cls_loss_var(&tape, out.probs, out.masks, &gt, loss)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::arg("empty batch"))?;
    let mean = tape.mul_scalar(total, 1.0 / batch.len() as f64);
    let value = tape.item(mean)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("segmentation loss became {value}")));
    }
    let grads = tape.backward(mean)?;
    adam.step(&mut model.params, &p.grads(&tape, &grads))?;
    Ok(value)
}

/// Adam on the mean mask-classification loss. Validation falls back to the
/// training set when `val` is empty; the best checkpoint is the logged row
/// with the lowest validation loss (earliest on ties).
pub fn train_seg(mut model: MaskFormer, train: &[SegSample], val: &[SegSample], cfg: &TrainSegConfig) -> Result<TrainSegOutcome> {
    if train.is_empty() {
        return Err(Error::arg("empty training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let val = if val.is_empty() { train } else { val };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let row = |model: &MaskFormer, epoch: usize, steps: usize, train_loss: f64| -> Result<EpochLog> {
        let (val_loss, conf) = evaluate_seg(model, val, &cfg.loss)?;
        Ok(EpochLog {
            epoch,
            steps,
            train_loss,
            val_loss,
            miou: conf.iou().1,
            mean_acc: conf.accuracy().1,
        })
    };
    let initial_train = evaluate_seg(&model, train, &cfg.loss)?.0;
    let mut log = vec![row(&model, 0, 0, initial_train)?];
    let mut best_epoch = 0;
    let mut best_params = model.params.tensors().clone();
    let mut steps = 0usize;
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let batch: Vec<&SegSample> = chunk.iter().map(|&i| &train[i]).collect();
            sum += seg_step(&mut model, &mut adam, &batch, &cfg.loss)?;
            batches += 1;
            steps += 1;
        }
        if batches == 0 {
            break 'epochs;
        }
        let r = row(&model, epoch, steps, sum / batches as f64)?;
        if r.val_loss < log[best_epoch].val_loss {
            best_epoch = log.len();
            best_params = model.params.tensors().clone();
        }
        log.push(r);
    }
    Ok(TrainSegOutcome {
        model,
        log,
        best_epoch,
        best_params,
    })
}

/// `epoch,train_loss,val_loss,mIoU,mean_acc` rows with a header.
pub fn write_epoch_log_csv<W: Write>(w: W, log: &[EpochLog]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in log {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
