//! Procedural scenes for tests, demos and smoke runs.

use image::{Rgb, RgbImage};
use rand::Rng;

use super::image_io::ImageSample;
use super::manifest::{ImageRecord, PolygonAnnotation};
use super::raster::rasterize_polygon;

const PALETTE: [[u8; 3]; 8] = [
    [200, 40, 40],
    [40, 170, 60],
    [50, 70, 210],
    [220, 200, 40],
    [180, 60, 200],
    [40, 190, 200],
    [240, 130, 30],
    [20, 20, 20],
];

pub fn class_color(class_id: usize) -> [u8; 3] {
    PALETTE[class_id % PALETTE.len()]
}

fn random_shape<R: Rng + ?Sized>(rng: &mut R, w: f64, h: f64) -> Vec<[f64; 2]> {
    let (min_side_w, min_side_h) = (w * 0.25, h * 0.25);
    let x0 = rng.random_range(0.0..w - min_side_w);
    let y0 = rng.random_range(0.0..h - min_side_h);
    let x1 = rng.random_range(x0 + min_side_w..=w);
    let y1 = rng.random_range(y0 + min_side_h..=h);
    if rng.random_bool(0.5) {
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    } else {
        vec![[x0, y1], [(x0 + x1) / 2.0, y0], [x1, y1]]
    }
}

/// A gray noisy background with one to three class-colored polygons.
///
/// Shapes are painted in annotation order, so later annotations occlude
/// earlier ones exactly as the label map resolves overlaps.
pub fn synthetic_scene<R: Rng + ?Sized>(rng: &mut R, path: &str, width: u32, height: u32, num_classes: usize) -> ImageSample {
    let shapes = rng.random_range(1..=3usize);
    let annotations: Vec<PolygonAnnotation> = (0..shapes)
        .map(|_| PolygonAnnotation {
            class_id: rng.random_range(0..num_classes),
            polygon: random_shape(rng, width as f64, height as f64),
        })
        .collect();
    let mut image = RgbImage::from_fn(width, height, |_, _| {
        let v = 120u8 + rng.random_range(0..16u8);
        Rgb([v, v, v])
    });
    for a in &annotations {
        let m = rasterize_polygon(&a.polygon, height as usize, width as usize).expect("shapes have 3+ vertices");
        let c = class_color(a.class_id);
        for (x, y, p) in image.enumerate_pixels_mut() {
            if m.get(y as usize, x as usize) {
                *p = Rgb(c);
            }
        }
    }
    let record = ImageRecord {
        path: path.to_string(),
        width,
        height,
        orientation: 1,
        annotations,
    };
    ImageSample { image, record }
}
