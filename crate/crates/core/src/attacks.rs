//! Post-processing attacks applied to test images before scoring.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::ImageReader;

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::metrics::Attack;

/// JPEG encode at `quality` (1–100) and decode back.
pub fn jpeg_attack(img: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Attack(format!("JPEG quality {quality} outside 1..=100")));
    }
    let rgb = img.to_rgb8()?;
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(&rgb)
        .map_err(|e| Error::Attack(format!("JPEG encode: {e}")))?;
    let decoded = ImageReader::with_format(Cursor::new(buf), image::ImageFormat::Jpeg)
        .decode()
        .map_err(|e| Error::Attack(format!("JPEG decode: {e}")))?
        .to_rgb8();
    Ok(ImageTensor::from_rgb8(&decoded))
}

/// Size of the intermediate image of [`scale_attack`].
pub fn scaled_size(height: usize, width: usize, ratio: f64) -> (usize, usize) {
    (((height as f64) * ratio).floor().max(1.0) as usize, ((width as f64) * ratio).floor().max(1.0) as usize)
}

/// Bilinear downscale by `ratio` (floored size), then back to the original size.
pub fn scale_attack(img: &ImageTensor, ratio: f64) -> Result<ImageTensor> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Attack(format!("scale ratio {ratio} outside (0, 1]")));
    }
    let (h, w) = scaled_size(img.height(), img.width(), ratio);
    Ok(img.resize(h, w).resize(img.height(), img.width()))
}

pub fn apply_attack(img: &ImageTensor, attack: &Attack) -> Result<ImageTensor> {
    match *attack {
        Attack::Jpeg(q) => jpeg_attack(img, q),
        Attack::Scale(r) => scale_attack(img, r),
    }
}
