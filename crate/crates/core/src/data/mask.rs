use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value reserved for pixels that belong to no class.
pub const BACKGROUND: u8 = 255;

/// Row-major binary raster.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim("BinaryMask", &[height, width], &[data.len()]));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Per-pixel class ids; [`BACKGROUND`] marks unlabeled pixels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::dim("LabelMap", &[height, width], &[labels.len()]));
        }
        Ok(Self { height, width, labels })
    }

    pub fn background(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![BACKGROUND; height * width],
        }
    }

    /// Paints class masks in order; later masks win on overlap.
    pub fn from_masks(height: usize, width: usize, masks: &[(usize, &BinaryMask)]) -> Result<Self> {
        let mut out = Self::background(height, width);
        for (class_id, m) in masks {
            if m.height() != height || m.width() != width {
                return Err(Error::dim("LabelMap::from_masks", &[height, width], &[m.height(), m.width()]));
            }
            if *class_id >= BACKGROUND as usize {
                return Err(Error::arg(format!("class id {class_id} collides with background")));
            }
            for (l, &b) in out.labels.iter_mut().zip(m.data()) {
                if b {
                    *l = *class_id as u8;
                }
            }
        }
        Ok(out)
    }

    pub fn class_mask(&self, class_id: u8) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.labels.iter().map(|&l| l == class_id).collect(),
        }
    }
}
