use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, ImageFormat, RgbImage};

use super::manifest::ImageRecord;
use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Pixels of one image together with its manifest record.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub image: RgbImage,
    pub record: ImageRecord,
}

impl ImageSample {
    pub fn new(image: RgbImage, record: ImageRecord) -> Result<Self> {
        if image.width() != record.width || image.height() != record.height {
            return Err(Error::Validation {
                record: record.path.clone(),
                message: format!(
                    "pixels are {}x{} but the record says {}x{}",
                    image.width(),
                    image.height(),
                    record.width,
                    record.height
                ),
            });
        }
        Ok(Self { image, record })
    }

    /// `[3, H, W]` tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        rgb_to_tensor(&self.image)
    }
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f64 / 255.0
    })
}

/// Loads a PNG or PPM/PGM file as 8-bit RGB.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(image::open(path)?.to_rgb8())
}

/// Loads the image of `record` from `root` and checks its size.
pub fn load_sample(root: &Path, record: &ImageRecord) -> Result<ImageSample> {
    ImageSample::new(load_rgb(root.join(&record.path))?, record.clone())
}

fn format_for(path: &Path) -> ImageFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => ImageFormat::Png,
        _ => ImageFormat::Pnm,
    }
}

fn write_pnm(path: &Path, subtype: PnmSubtype, w: u32, h: u32, buf: &[u8], color: ExtendedColorType) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    PnmEncoder::new(file).with_subtype(subtype).write_image(buf, w, h, color)?;
    Ok(())
}

/// Writes RGB as PNG for `.png` paths, binary PPM otherwise.
pub fn save_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match format_for(path) {
        ImageFormat::Png => img.save_with_format(path, ImageFormat::Png)?,
        _ => write_pnm(
            path,
            PnmSubtype::Pixmap(SampleEncoding::Binary),
            img.width(),
            img.height(),
            img.as_raw(),
            ExtendedColorType::Rgb8,
        )?,
    }
    Ok(())
}

/// Writes an 8-bit binary PGM.
pub fn save_pgm(width: usize, height: usize, pixels: &[u8], path: impl AsRef<Path>) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::dim("save_pgm", &[height, width], &[pixels.len()]));
    }
    write_pnm(
        path.as_ref(),
        PnmSubtype::Graymap(SampleEncoding::Binary),
        width as u32,
        height as u32,
        pixels,
        ExtendedColorType::L8,
    )
}

pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(image::open(path)?.to_luma8())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_and_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(5, 3, |x, y| image::Rgb([x as u8 * 40, y as u8 * 70, 255 - x as u8]));
        for name in ["a.ppm", "a.png"] {
            let p = dir.path().join(name);
            save_rgb(&img, &p).unwrap();
            assert_eq!(load_rgb(&p).unwrap(), img);
        }
        let p = dir.path().join("g.pgm");
        save_pgm(3, 2, &[0, 1, 2, 253, 254, 255], &p).unwrap();
        assert!(std::fs::read(&p).unwrap().starts_with(b"P5"));
        assert_eq!(load_gray(&p).unwrap().into_raw(), vec![0, 1, 2, 253, 254, 255]);
        assert!(matches!(load_rgb(dir.path().join("none.png")), Err(Error::MissingFile(_))));
    }

    #[test]
    fn tensor_layout_is_channel_major() {
        let img = RgbImage::from_fn(2, 1, |x, _| image::Rgb([if x == 0 { 255 } else { 0 }, 0, 51]));
        let t = rgb_to_tensor(&img);
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 0.2, 0.2]);
    }
}
