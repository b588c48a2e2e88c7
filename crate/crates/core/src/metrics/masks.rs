use crate::data::{BinaryMask, BACKGROUND};
use crate::error::{Error, Result};

/// `|a∩b| / |a∪b|`, 1 when both masks are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::dim("mask_iou", &[a.height(), a.width()], &[b.height(), b.width()]));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Pixel confusion counts, `(K+1)×(K+1)` with background as the last index.
/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelConfusion {
    num_classes: usize,
    counts: Vec<u64>,
}

impl PixelConfusion {
    pub fn new(num_classes: usize) -> Self {
        let n = num_classes + 1;
        Self {
            num_classes,
            counts: vec![0; n * n],
        }
    }

    fn index(&self, label: u8) -> Result<usize> {
        match label {
            BACKGROUND => Ok(self.num_classes),
            l if (l as usize) < self.num_classes => Ok(l as usize),
            l => Err(Error::arg(format!("label {l} outside {} classes", self.num_classes))),
        }
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::dim("PixelConfusion::add", &[pred.len()], &[gt.len()]));
        }
        let n = self.num_classes + 1;
        for (&p, &g) in pred.iter().zip(gt) {
            let (pi, gi) = (self.index(p)?, self.index(g)?);
            self.counts[gi * n + pi] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        assert_eq!(self.num_classes, other.num_classes);
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * (self.num_classes + 1) + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.num_classes + 1).map(<[u64]>::to_vec).collect()
    }

    fn gt_total(&self, k: usize) -> u64 {
        (0..=self.num_classes).map(|p| self.get(k, p)).sum()
    }

    fn pred_total(&self, k: usize) -> u64 {
        (0..=self.num_classes).map(|g| self.get(g, k)).sum()
    }

    /// Per-class IoU (`None` when the class is absent from both maps) and
    /// their mean; 1 when no class occurs at all.
    pub fn iou(&self) -> (Vec<Option<f64>>, f64) {
        let per: Vec<Option<f64>> = (0..self.num_classes)
            .map(|k| {
                let inter = self.get(k, k);
                let union = self.gt_total(k) + self.pred_total(k) - inter;
                (union > 0).then(|| inter as f64 / union as f64)
            })
            .collect();
        (per.clone(), mean_present(&per))
    }

    /// Per-class recall (`None` when absent from ground truth) and their mean;
    /// 1 when ground truth holds no class pixels.
    pub fn accuracy(&self) -> (Vec<Option<f64>>, f64) {
        let per: Vec<Option<f64>> = (0..self.num_classes)
            .map(|k| {
                let total = self.gt_total(k);
                (total > 0).then(|| self.get(k, k) as f64 / total as f64)
            })
            .collect();
        (per.clone(), mean_present(&per))
    }

    /// Fraction of all pixels, background included, labeled correctly.
    pub fn pixel_accuracy(&self) -> f64 {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return 1.0;
        }
        let correct: u64 = (0..=self.num_classes).map(|k| self.get(k, k)).sum();
        correct as f64 / total as f64
    }
}

fn mean_present(per: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    if present.is_empty() {
        1.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

pub fn mean_iou(pred: &[u8], gt: &[u8], num_classes: usize) -> Result<(Vec<Option<f64>>, f64)> {
    let mut c = PixelConfusion::new(num_classes);
    c.add(pred, gt)?;
    Ok(c.iou())
}

pub fn mean_accuracy(pred: &[u8], gt: &[u8], num_classes: usize) -> Result<(Vec<Option<f64>>, f64)> {
    let mut c = PixelConfusion::new(num_classes);
    c.add(pred, gt)?;
    Ok(c.accuracy())
}

pub fn pixel_accuracy(pred: &[u8], gt: &[u8], num_classes: usize) -> Result<f64> {
    let mut c = PixelConfusion::new(num_classes);
    c.add(pred, gt)?;
    Ok(c.pixel_accuracy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const B: u8 = BACKGROUND;

    #[test]
    fn mask_iou_examples() {
        let a = BinaryMask::from_fn(2, 3, |_, x| x < 2);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let b = BinaryMask::from_fn(2, 3, |_, x| x == 2);
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
        let c = BinaryMask::from_vec(1, 3, vec![true, true, false]).unwrap();
        let d = BinaryMask::from_vec(1, 3, vec![false, true, true]).unwrap();
        assert_eq!(mask_iou(&c, &d).unwrap(), 1.0 / 3.0);
        let e = BinaryMask::new(2, 2);
        assert_eq!(mask_iou(&e, &e).unwrap(), 1.0);
        assert!(mask_iou(&a, &e).is_err());
    }

    #[test]
    fn identical_maps_score_one() {
        let gt = [0, 1, 1, B, 2, 0];
        assert_eq!(mean_iou(&gt, &gt, 4).unwrap().1, 1.0);
        assert_eq!(mean_accuracy(&gt, &gt, 4).unwrap().1, 1.0);
        let (per, _) = mean_iou(&gt, &gt, 4).unwrap();
        assert_eq!(per[3], None);
    }

    #[test]
    fn all_background_prediction() {
        let gt = [0, 1, 1, B];
        let (per, mean) = mean_accuracy(&[B; 4], &gt, 3).unwrap();
        assert_eq!(per, vec![Some(0.0), Some(0.0), None]);
        assert_eq!(mean, 0.0);
        assert_eq!(pixel_accuracy(&[B; 4], &gt, 3).unwrap(), 0.25);
    }

    #[test]
    fn labels_out_of_range_are_errors() {
        assert!(mean_iou(&[5], &[0], 4).is_err());
        assert!(mean_iou(&[0, 1], &[0], 4).is_err());
    }

    fn counting_oracle(pred: &[u8], gt: &[u8], k: usize) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
        let mut ious = Vec::new();
        let mut accs = Vec::new();
        for c in 0..k as u8 {
            let inter = pred.iter().zip(gt).filter(|(p, g)| **p == c && **g == c).count();
            let union = pred.iter().zip(gt).filter(|(p, g)| **p == c || **g == c).count();
            let in_gt = gt.iter().filter(|g| **g == c).count();
            ious.push((union > 0).then(|| inter as f64 / union as f64));
            accs.push((in_gt > 0).then(|| inter as f64 / in_gt as f64));
        }
        (ious, accs)
    }

    fn label() -> impl Strategy<Value = u8> {
        prop_oneof![0u8..4, Just(B)]
    }

    proptest! {
        #[test]
        fn matches_counting_oracle(pairs in prop::collection::vec((label(), label()), 1..80)) {
            let (pred, gt): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let (iou, acc) = counting_oracle(&pred, &gt, 4);
            let (got_iou, _) = mean_iou(&pred, &gt, 4).unwrap();
            let (got_acc, _) = mean_accuracy(&pred, &gt, 4).unwrap();
            prop_assert_eq!(got_iou, iou);
            prop_assert_eq!(got_acc, acc);
        }

        #[test]
        fn metrics_bounded(pairs in prop::collection::vec((label(), label()), 1..80)) {
            let (pred, gt): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let m = mean_iou(&pred, &gt, 4).unwrap().1;
            let a = mean_accuracy(&pred, &gt, 4).unwrap().1;
            prop_assert!((0.0..=1.0).contains(&m) && (0.0..=1.0).contains(&a));
            if pred == gt {
                prop_assert_eq!(m, 1.0);
            }
        }
    }
}
