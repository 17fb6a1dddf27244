//! 8-bit PNG previews. Lossy by design; use PFM for anything numeric.

use std::path::Path;

use image::{GrayImage, RgbImage};
use surfelsplat_core::Image;

use crate::error::{Error, Result};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes RGB images as-is and single-channel images normalized to their
/// own `[0, max]` range (depth previews).
pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    match img.channels() {
        3 => RgbImage::from_raw(w, h, img.data().iter().map(|&v| quantize(v)).collect())
            .expect("buffer size matches")
            .save(path)?,
        1 => {
            let max = img.data().iter().cloned().fold(0.0, f64::max);
            let s = if max > 0.0 { 1.0 / max } else { 0.0 };
            GrayImage::from_raw(w, h, img.data().iter().map(|&v| quantize(v * s)).collect())
                .expect("buffer size matches")
                .save(path)?
        }
        c => return Err(Error::format("PNG", format!("cannot preview {c} channels"))),
    }
    Ok(())
}

/// Loads an 8-bit image (any format the `image` crate decodes) as RGB in `[0, 1]`.
pub fn load_rgb(path: &Path) -> Result<Image> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok(Image::from_vec(w as usize, h as usize, 3, data))
}
