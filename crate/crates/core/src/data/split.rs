use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.85, 0.10, 0.05);

/// Split sizes: validation and test take `floor(n·r)`, train keeps the rest.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    // the epsilon absorbs products such as 0.1 * 30 landing just below an integer
    let floor = |r: f64| ((n as f64 * r) + 1e-9).floor() as usize;
    let (nv, nt) = (floor(va), floor(te));
    Ok((n - nv - nt, nv, nt))
}

/// Seeded shuffle, then consecutive train / valid / test slices.
pub fn split_dataset(
    manifest: &DatasetManifest,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest)> {
    let (ntr, nv, _) = split_sizes(manifest.images.len(), ratios)?;
    let mut images = manifest.images.clone();
    images.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = images.split_off(ntr + nv);
    let valid = images.split_off(ntr);
    Ok((manifest.with_images(images), manifest.with_images(valid), manifest.with_images(test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::ImageRecord;
    use std::collections::BTreeSet;

    fn manifest(n: usize) -> DatasetManifest {
        DatasetManifest::default().with_images(
            (0..n)
                .map(|i| ImageRecord {
                    path: format!("img_{i:04}.png"),
                    width: 4,
                    height: 4,
                    orientation: 1,
                    annotations: vec![],
                })
                .collect(),
        )
    }

    fn paths(m: &DatasetManifest) -> Vec<String> {
        m.images.iter().map(|r| r.path.clone()).collect()
    }

    #[test]
    fn thousand_images() {
        let (a, b, c) = split_dataset(&manifest(1000), DEFAULT_SPLIT, 7).unwrap();
        assert_eq!((a.images.len(), b.images.len(), c.images.len()), (850, 100, 50));
    }

    #[test]
    fn remainder_goes_to_train() {
        assert_eq!(split_sizes(1, DEFAULT_SPLIT).unwrap(), (1, 0, 0));
        assert_eq!(split_sizes(30, DEFAULT_SPLIT).unwrap(), (26, 3, 1));
        assert!(split_sizes(10, (0.5, 0.5, 0.5)).is_err());
    }

    #[test]
    fn seeds_control_the_permutation() {
        let m = manifest(40);
        let x = split_dataset(&m, DEFAULT_SPLIT, 1).unwrap();
        let y = split_dataset(&m, DEFAULT_SPLIT, 1).unwrap();
        let z = split_dataset(&m, DEFAULT_SPLIT, 2).unwrap();
        assert_eq!(x, y);
        assert_ne!(paths(&x.0), paths(&z.0));
        assert_eq!(z.0.images.len(), x.0.images.len());
    }

    #[test]
    fn pieces_partition_the_input() {
        let m = manifest(123);
        let (a, b, c) = split_dataset(&m, DEFAULT_SPLIT, 5).unwrap();
        let mut all: Vec<String> = paths(&a);
        all.extend(paths(&b));
        all.extend(paths(&c));
        assert_eq!(all.len(), 123);
        let set: BTreeSet<String> = all.into_iter().collect();
        assert_eq!(set, paths(&m).into_iter().collect());
    }
}
