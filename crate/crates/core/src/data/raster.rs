use super::manifest::{DatasetManifest, ImageRecord};
use super::mask::{BinaryMask, LabelMap};
use crate::error::{Error, Result};

/// X coordinate where edge `a→b` crosses the horizontal line at `y`, if it
/// does under the half-open rule `(a.y > y) != (b.y > y)`.
#[inline]
fn crossing(a: [f64; 2], b: [f64; 2], y: f64) -> Option<f64> {
    ((a[1] > y) != (b[1] > y)).then(|| (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0])
}

/// Even-odd point-in-polygon by ray crossing.
pub fn point_in_polygon(x: f64, y: f64, poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        if let Some(cx) = crossing(poly[i], poly[(i + 1) % n], y) {
            if x < cx {
                inside = !inside;
            }
        }
    }
    inside
}

/// Scanline fill with the even-odd rule; a pixel is set when its center is
/// inside the polygon.
pub fn rasterize_polygon(poly: &[[f64; 2]], height: usize, width: usize) -> Result<BinaryMask> {
    if poly.len() < 3 {
        return Err(Error::arg(format!("polygon with {} vertices", poly.len())));
    }
    let mut mask = BinaryMask::new(height, width);
    let n = poly.len();
    let mut xs = Vec::with_capacity(n);
    for row in 0..height {
        let yc = row as f64 + 0.5;
        xs.clear();
        xs.extend((0..n).filter_map(|i| crossing(poly[i], poly[(i + 1) % n], yc)));
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // centers c + 0.5 with span[0] <= c + 0.5 < span[1]
            let start = (span[0] - 0.5).ceil().max(0.0) as usize;
            let mut col = start.saturating_sub(1);
            while col < width {
                let xc = col as f64 + 0.5;
                if xc >= span[1] {
                    break;
                }
                if xc >= span[0] {
                    mask.set(row, col, true);
                }
                col += 1;
            }
        }
    }
    Ok(mask)
}

/// Label map of a record at its stored size; later annotations win overlaps.
pub fn record_label_map(rec: &ImageRecord) -> Result<LabelMap> {
    let (h, w) = (rec.height as usize, rec.width as usize);
    let masks = rec
        .annotations
        .iter()
        .map(|a| Ok((a.class_id, rasterize_polygon(&a.polygon, h, w)?)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(usize, &BinaryMask)> = masks.iter().map(|(c, m)| (*c, m)).collect();
    LabelMap::from_masks(h, w, &refs)
}

/// Dataset-wide spatial density of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    /// Values scaled to `0..=255`.
    pub fn to_gray(&self) -> Vec<u8> {
        self.values.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }
}

/// Unnormalized per-annotation grid: the polygon scaled onto the grid and
/// sampled at cell centers.
pub fn annotation_grid(rec: &ImageRecord, polygon: &[[f64; 2]], grid_h: usize, grid_w: usize) -> Result<Vec<f64>> {
    let (sx, sy) = (grid_w as f64 / rec.width as f64, grid_h as f64 / rec.height as f64);
    let scaled: Vec<[f64; 2]> = polygon.iter().map(|v| [v[0] * sx, v[1] * sy]).collect();
    Ok(rasterize_polygon(&scaled, grid_h, grid_w)?.to_f64())
}

/// Sum of a class's masks on a `grid_h × grid_w` grid, normalized to max 1.
pub fn annotation_heatmap(manifest: &DatasetManifest, class_id: usize, grid_h: usize, grid_w: usize) -> Result<Heatmap> {
    if class_id >= manifest.classes.len() {
        return Err(Error::arg(format!("class {class_id} of {}", manifest.classes.len())));
    }
    let mut values = vec![0.0; grid_h * grid_w];
    for rec in &manifest.images {
        for a in rec.annotations.iter().filter(|a| a.class_id == class_id) {
            let g = annotation_grid(rec, &a.polygon, grid_h, grid_w)?;
            values.iter_mut().zip(g).for_each(|(v, x)| *v += x);
        }
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    Ok(Heatmap { grid_h, grid_w, values })
}
