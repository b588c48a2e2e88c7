use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use rand::Rng;

use super::image_io::ImageSample;
use super::manifest::PolygonAnnotation;
use crate::error::{Error, Result};

pub const MAX_ZOOM: f64 = 0.20;
pub const MAX_COLOR_DELTA: f64 = 0.25;

fn map_vertices(anns: &mut [PolygonAnnotation], f: impl Fn([f64; 2]) -> [f64; 2]) {
    for a in anns {
        for v in &mut a.polygon {
            *v = f(*v);
        }
    }
}

/// Bilinear resize; polygon vertices scale by the same per-axis factors.
pub fn resize_with_annotations(sample: &ImageSample, width: u32, height: u32) -> Result<ImageSample> {
    if width == 0 || height == 0 {
        return Err(Error::arg(format!("resize to {width}x{height}")));
    }
    let mut out = sample.clone();
    if sample.image.dimensions() == (width, height) {
        return Ok(out);
    }
    out.image = imageops::resize(&sample.image, width, height, FilterType::Triangle);
    let sx = width as f64 / sample.record.width as f64;
    let sy = height as f64 / sample.record.height as f64;
    map_vertices(&mut out.record.annotations, |[x, y]| [x * sx, y * sy]);
    out.record.width = width;
    out.record.height = height;
    Ok(out)
}

/// Transforms pixels and vertices so the stored orientation tag becomes 1.
///
/// Tags follow the EXIF convention. Pixel `(x, y)` of a `W×H` image with
/// tag 6 lands on `(H−1−y, x)`; a continuous vertex lands on `(H−y, x)`, which
/// keeps every pixel center in the same relation to the polygon.
pub fn auto_orient(sample: &ImageSample) -> Result<ImageSample> {
    let img = &sample.image;
    let (w, h) = (sample.record.width as f64, sample.record.height as f64);
    let mut out = sample.clone();
    let (image, f): (RgbImage, Box<dyn Fn([f64; 2]) -> [f64; 2]>) = match sample.record.orientation {
        1 => return Ok(out),
        2 => (imageops::flip_horizontal(img), Box::new(move |[x, y]| [w - x, y])),
        3 => (imageops::rotate180(img), Box::new(move |[x, y]| [w - x, h - y])),
        4 => (imageops::flip_vertical(img), Box::new(move |[x, y]| [x, h - y])),
        5 => (
            imageops::flip_horizontal(&imageops::rotate90(img)),
            Box::new(move |[x, y]| [y, x]),
        ),
        6 => (imageops::rotate90(img), Box::new(move |[x, y]| [h - y, x])),
        7 => (
            imageops::flip_horizontal(&imageops::rotate270(img)),
            Box::new(move |[x, y]| [h - y, w - x]),
        ),
        8 => (imageops::rotate270(img), Box::new(move |[x, y]| [y, w - x])),
        t => {
            return Err(Error::Validation {
                record: sample.record.path.clone(),
                message: format!("unknown orientation tag {t}"),
            })
        }
    };
    map_vertices(&mut out.record.annotations, f);
    out.record.width = image.width();
    out.record.height = image.height();
    out.record.orientation = 1;
    out.image = image;
    Ok(out)
}

/// Sutherland–Hodgman clip against an axis-aligned rectangle.
pub fn clip_polygon(poly: &[[f64; 2]], x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
    let mut pts = poly.to_vec();
    // each edge: (axis, bound, keep-if-greater)
    for (axis, bound, greater) in [(0, x0, true), (0, x1, false), (1, y0, true), (1, y1, false)] {
        if pts.is_empty() {
            break;
        }
        let inside = |p: &[f64; 2]| if greater { p[axis] >= bound } else { p[axis] <= bound };
        let mut next = Vec::with_capacity(pts.len() + 4);
        for i in 0..pts.len() {
            let cur = pts[i];
            let prev = pts[(i + pts.len() - 1) % pts.len()];
            let hit = || {
                let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                let mut p = [prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])];
                p[axis] = bound;
                p
            };
            match (inside(&prev), inside(&cur)) {
                (true, true) => next.push(cur),
                (true, false) => next.push(hit()),
                (false, true) => {
                    next.push(hit());
                    next.push(cur);
                }
                (false, false) => {}
            }
        }
        pts = next;
    }
    pts
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    twice.abs() / 2.0
}

/// Crop window `(x, y, w, h)` for a zoom factor.
pub fn crop_window<R: Rng + ?Sized>(width: u32, height: u32, zoom: f64, rng: &mut R) -> (u32, u32, u32, u32) {
    let cw = ((width as f64 * (1.0 - zoom)).round() as u32).clamp(1, width);
    let ch = ((height as f64 * (1.0 - zoom)).round() as u32).clamp(1, height);
    let x = rng.random_range(0..=width - cw);
    let y = rng.random_range(0..=height - ch);
    (x, y, cw, ch)
}

/// Crops a random window of side fraction `1 − zoom` and resizes it back;
/// annotations are clipped to the window and dropped when nothing is left.
pub fn augment_crop_zoom<R: Rng + ?Sized>(sample: &ImageSample, zoom: f64, rng: &mut R) -> Result<ImageSample> {
    if !(0.0..=MAX_ZOOM).contains(&zoom) {
        return Err(Error::arg(format!("zoom {zoom} outside [0, {MAX_ZOOM}]")));
    }
    if zoom == 0.0 {
        return Ok(sample.clone());
    }
    let (w, h) = (sample.record.width, sample.record.height);
    let (x, y, cw, ch) = crop_window(w, h, zoom, rng);
    Ok(crop_resize(sample, x, y, cw, ch))
}

/// Crops `(x, y, cw, ch)` and resizes back to the original size.
pub fn crop_resize(sample: &ImageSample, x: u32, y: u32, cw: u32, ch: u32) -> ImageSample {
    let (w, h) = (sample.record.width, sample.record.height);
    let cropped = imageops::crop_imm(&sample.image, x, y, cw, ch).to_image();
    let image = if (cw, ch) == (w, h) {
        cropped
    } else {
        imageops::resize(&cropped, w, h, FilterType::Triangle)
    };
    let (sx, sy) = (w as f64 / cw as f64, h as f64 / ch as f64);
    let (fx, fy) = (x as f64, y as f64);
    let annotations = sample
        .record
        .annotations
        .iter()
        .filter_map(|a| {
            let clipped = clip_polygon(&a.polygon, fx, fy, fx + cw as f64, fy + ch as f64);
            (clipped.len() >= 3 && polygon_area(&clipped) > 0.0).then(|| PolygonAnnotation {
                class_id: a.class_id,
                polygon: clipped.iter().map(|v| [(v[0] - fx) * sx, (v[1] - fy) * sy]).collect(),
            })
        })
        .collect();
    let mut record = sample.record.clone();
    record.annotations = annotations;
    ImageSample { image, record }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(-MAX_COLOR_DELTA..=MAX_COLOR_DELTA).contains(&delta) {
        return Err(Error::arg(format!("delta {delta} outside [-{MAX_COLOR_DELTA}, {MAX_COLOR_DELTA}]")));
    }
    Ok(())
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// `pixel · (1 + delta)`, rounded and clamped.
pub fn augment_brightness(sample: &ImageSample, delta: f64) -> Result<ImageSample> {
    check_delta(delta)?;
    let mut out = sample.clone();
    if delta != 0.0 {
        for p in out.image.iter_mut() {
            *p = to_u8(*p as f64 * (1.0 + delta));
        }
    }
    Ok(out)
}

/// Scales each channel's offset from BT.601 luma by `1 + delta`.
pub fn augment_saturation(sample: &ImageSample, delta: f64) -> Result<ImageSample> {
    check_delta(delta)?;
    let mut out = sample.clone();
    if delta != 0.0 {
        for Rgb(px) in out.image.pixels_mut() {
            let [r, g, b] = px.map(f64::from);
            let luma = 0.299 * r + 0.587 * g + 0.114 * b;
            *px = [r, g, b].map(|c| to_u8(luma + (c - luma) * (1.0 + delta)));
        }
    }
    Ok(out)
}
