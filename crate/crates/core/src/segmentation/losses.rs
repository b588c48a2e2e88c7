use serde::{Deserialize, Serialize};

use crate::autograd::{bce_value, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Smallest probability fed to a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

fn pixel_indices(shape: &[usize], gt: &[usize]) -> Result<Vec<usize>> {
    if shape.len() != 3 {
        return Err(Error::dim("per_pixel_ce", shape, &[0, 0, 0]));
    }
    let (k, hw) = (shape[0], shape[1] * shape[2]);
    if gt.len() != hw {
        return Err(Error::dim("per_pixel_ce", shape, &[gt.len()]));
    }
    gt.iter()
        .enumerate()
        .map(|(i, &c)| {
            if c >= k {
                Err(Error::arg(format!("pixel {i}: class {c} >= {k}")))
            } else {
                Ok(c * hw + i)
            }
        })
        .collect()
}

/// Per-pixel cross-entropy summed over all pixels: `Σ_i −ln p_i(gt_i)`.
///
/// `probs` is `[K, H, W]`, `gt` holds `H·W` class ids.
pub fn per_pixel_ce_var(tape: &Tape, probs: Var, gt: &[usize]) -> Result<Var> {
    let idx = pixel_indices(&tape.shape(probs), gt)?;
    let picked = tape.gather(probs, &idx)?;
    Ok(tape.neg(tape.sum(tape.log_clamped(picked, f64::MIN_POSITIVE))))
}

pub fn per_pixel_ce(probs: &Tensor, gt: &[usize]) -> Result<f64> {
    let idx = pixel_indices(probs.shape(), gt)?;
    Ok(idx.iter().map(|&i| -probs.data()[i].max(f64::MIN_POSITIVE).ln()).sum())
}

/// [`per_pixel_ce`] divided by the pixel count.
pub fn per_pixel_ce_mean(probs: &Tensor, gt: &[usize]) -> Result<f64> {
    Ok(per_pixel_ce(probs, gt)? / gt.len().max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskLossWeights {
    pub bce: f64,
    pub dice: f64,
}

impl Default for MaskLossWeights {
    fn default() -> Self {
        Self { bce: 1.0, dice: 1.0 }
    }
}

/// Soft-mask loss: weighted mean BCE plus dice `1 − 2|p∩g|/(|p|+|g|)`.
///
/// The dice term is 0 when both masks are empty.
pub fn binary_mask_loss_var(tape: &Tape, pred: Var, gt: &[f64], w: &MaskLossWeights) -> Result<Var> {
    let n = tape.shape(pred).iter().product::<usize>();
    if n != gt.len() {
        return Err(Error::dim("binary_mask_loss", &tape.shape(pred), &[gt.len()]));
    }
    let flat = tape.reshape(pred, &[n])?;
    let target = Tensor::from_vec(gt.to_vec());
    let bce = tape.bce_loss(flat, &target)?;
    let gt_sum: f64 = gt.iter().sum();
    let pred_sum = tape.sum(flat);
    let denom = tape.item(pred_sum)? + gt_sum;
    let mut loss = tape.mul_scalar(bce, w.bce);
    if denom > 0.0 {
        let inter = tape.sum(tape.mul(flat, tape.constant(target))?);
        let ratio = tape.div(tape.mul_scalar(inter, 2.0), tape.add_scalar(pred_sum, gt_sum))?;
        let dice = tape.add_scalar(tape.neg(ratio), 1.0);
        loss = tape.add(loss, tape.mul_scalar(dice, w.dice))?;
    }
    Ok(loss)
}

pub fn binary_mask_loss(pred: &[f64], gt: &[f64], w: &MaskLossWeights) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::dim("binary_mask_loss", &[pred.len()], &[gt.len()]));
    }
    let mut loss = w.bce * bce_value(pred, gt);
    let denom: f64 = pred.iter().sum::<f64>() + gt.iter().sum::<f64>();
    if denom > 0.0 {
        let inter: f64 = pred.iter().zip(gt).map(|(p, g)| p * g).sum();
        loss += w.dice * (1.0 - 2.0 * inter / denom);
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    #[test]
    fn per_pixel_examples() {
        let uniform = Tensor::full(&[4, 1, 1], 0.25);
        assert_abs_diff_eq!(per_pixel_ce(&uniform, &[2]).unwrap(), 4f64.ln(), epsilon = 1e-12);
        let one_hot = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(per_pixel_ce(&one_hot, &[0, 1]).unwrap(), 0.0);
        assert!(per_pixel_ce(&one_hot, &[0, 2]).is_err());
    }

    #[test]
    fn per_pixel_two_by_two_hand_sum() {
        // K=2, pixels (row-major) with p(class 0) = 0.9, 0.2, 0.6, 0.5
        let p0 = [0.9, 0.2, 0.6, 0.5];
        let mut data = p0.to_vec();
        data.extend(p0.iter().map(|p| 1.0 - p));
        let probs = Tensor::new(vec![2, 2, 2], data).unwrap();
        let gt = [0, 1, 1, 0];
        let want = -(0.9f64.ln() + 0.8f64.ln() + 0.4f64.ln() + 0.5f64.ln());
        assert_abs_diff_eq!(per_pixel_ce(&probs, &gt).unwrap(), want, epsilon = 1e-12);
        assert_abs_diff_eq!(per_pixel_ce_mean(&probs, &gt).unwrap(), want / 4.0, epsilon = 1e-12);
        let tape = Tape::new();
        let v = tape.constant(probs);
        assert_abs_diff_eq!(tape.item(per_pixel_ce_var(&tape, v, &gt).unwrap()).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn mask_loss_examples() {
        let w = MaskLossWeights::default();
        let gt = [1.0, 0.0, 1.0, 1.0];
        assert!(binary_mask_loss(&gt, &gt, &w).unwrap() < 1e-6);

        let got = binary_mask_loss(&[0.5; 4], &[1.0; 4], &w).unwrap();
        assert_abs_diff_eq!(got, LN_2 + 1.0 / 3.0, epsilon = 1e-12);
        assert!((got - 1.0265).abs() < 1e-4);

        let comp: Vec<f64> = gt.iter().map(|g| 1.0 - g).collect();
        let dice_only = MaskLossWeights { bce: 0.0, dice: 1.0 };
        assert_eq!(binary_mask_loss(&comp, &gt, &dice_only).unwrap(), 1.0);

        assert_eq!(binary_mask_loss(&[0.0; 3], &[0.0; 3], &dice_only).unwrap(), 0.0);
        assert!(binary_mask_loss(&[0.0; 3], &[0.0; 2], &w).is_err());
    }

    #[test]
    fn mask_loss_tape_matches_values() {
        let w = MaskLossWeights::default();
        let pred = [0.1, 0.7, 0.95, 0.4, 0.5, 0.02];
        let gt = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let tape = Tape::new();
        let v = tape.constant(Tensor::from_vec(pred.to_vec()));
        let on_tape = tape.item(binary_mask_loss_var(&tape, v, &gt, &w).unwrap()).unwrap();
        assert_abs_diff_eq!(on_tape, binary_mask_loss(&pred, &gt, &w).unwrap(), epsilon = 1e-14);
    }
}
