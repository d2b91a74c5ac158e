use std::path::Path;

use image::{GrayImage, Luma, RgbImage};

use super::Mask;
use crate::error::{Error, Result};

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(image_err(path))?.to_rgb8())
}

/// Any non-zero pixel is foreground.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let g = image::open(path).map_err(image_err(path))?.to_luma8();
    Mask::from_vec(
        g.width() as usize,
        g.height() as usize,
        g.into_raw().into_iter().map(|v| u8::from(v > 0)).collect(),
    )
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(image_err(path))
}

/// Foreground written as 255.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let img = GrayImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    img.save(path).map_err(image_err(path))
}
