use image::{Rgb, RgbImage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::Generator;
use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// `n` generated images `[3, H, W]`, reproducible for a given `seed`.
pub fn sample(generator: &Generator, n: usize, seed: u64) -> Result<Vec<Tensor>> {
    if n == 0 {
        return Ok(vec![]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Tensor::randn(&[n, generator.config.latent_dim], 1.0, &mut rng);
    let out = generator.generate(&z)?;
    let per = out.numel() / n;
    let shape = &out.shape()[1..];
    out.data()
        .chunks(per)
        .map(|c| Tensor::new(shape.to_vec(), c.to_vec()))
        .collect()
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit RGB image from a `[3, H, W]` tensor in `[0, 1]`.
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::dim("tensor_to_rgb", &[3, 0, 0], s));
    }
    let (h, w) = (s[1], s[2]);
    let d = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        Rgb([quantize(d[p]), quantize(d[h * w + p]), quantize(d[2 * h * w + p])])
    }))
}

/// Tiles equally sized images row by row, `cols` per row, with a one-pixel
/// black gutter.
pub fn sample_grid(images: &[RgbImage], cols: usize) -> Result<RgbImage> {
    let first = images.first().ok_or_else(|| Error::arg("no images to tile"))?;
    if cols == 0 {
        return Err(Error::arg("grid needs at least one column"));
    }
    let (w, h) = first.dimensions();
    let cols = cols.min(images.len());
    let rows = images.len().div_ceil(cols);
    let mut grid = RgbImage::new(cols as u32 * (w + 1) - 1, rows as u32 * (h + 1) - 1);
    for (i, img) in images.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(Error::arg("grid images differ in size"));
        }
        let (ox, oy) = ((i % cols) as u32 * (w + 1), (i / cols) as u32 * (h + 1));
        for (x, y, p) in img.enumerate_pixels() {
            grid.put_pixel(ox + x, oy + y, *p);
        }
    }
    Ok(grid)
}

/// Two-colour stripes of random orientation, period and phase. Used as a
/// toy distribution that a small generator can learn quickly.
pub fn striped_images<R: Rng + ?Sized>(rng: &mut R, n: usize, height: usize, width: usize) -> Vec<Tensor> {
    (0..n)
        .map(|_| {
            let horizontal = rng.random_bool(0.5);
            let period = rng.random_range(2..=4usize);
            let phase = rng.random_range(0..2 * period);
            let on: [f64; 3] = [0.9, rng.random_range(0.6..0.9), 0.2];
            let off: [f64; 3] = [0.1, 0.1, rng.random_range(0.3..0.6)];
            Tensor::from_fn(&[3, height, width], |i| {
                let (c, p) = (i / (height * width), i % (height * width));
                let pos = if horizontal { p / width } else { p % width };
                if ((pos + phase) / period) % 2 == 0 {
                    on[c]
                } else {
                    off[c]
                }
            })
        })
        .collect()
}
