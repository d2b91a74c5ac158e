use image::RgbImage;

use crate::data::Mask;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::{resample_plane, Filter, Tensor};

/// Luminance weights applied to (R, G, B).
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Scale applied to mean-centred patch inputs so their spread is near unit.
pub const INPUT_GAIN: f64 = 4.0;

/// Grayscale `[1, 1, H, W]` tensor in `[0, 1]` at the native resolution.
pub fn grayscale(image: &RgbImage) -> Result<Tensor> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::invalid("image has a zero dimension"));
    }
    let data = image
        .pixels()
        .map(|p| (LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64) / 255.0)
        .collect();
    Tensor::new(&[1, 1, h, w], data)
}

/// Grayscale, then bilinear resize to `working_size x working_size`.
pub fn preprocess(image: &RgbImage, working_size: usize) -> Result<Tensor> {
    if working_size == 0 {
        return Err(Error::invalid("working size must be positive"));
    }
    let g = grayscale(image)?;
    let (_, _, h, w) = g.dims4()?;
    if (h, w) == (working_size, working_size) {
        return Ok(g);
    }
    let data = resample_plane(g.data(), h, w, working_size, working_size, Filter::Bilinear);
    Tensor::new(&[1, 1, working_size, working_size], data)
}

/// Nearest-centre resample of a binary mask.
pub fn resize_mask(mask: &Mask, w: usize, h: usize) -> Mask {
    if (mask.width, mask.height) == (w, h) {
        return mask.clone();
    }
    let (sx, sy) = (mask.width as f64 / w as f64, mask.height as f64 / h as f64);
    Mask::from_fn(w, h, |x, y| {
        let mx = (((x as f64 + 0.5) * sx) as usize).min(mask.width - 1);
        let my = (((y as f64 + 0.5) * sy) as usize).min(mask.height - 1);
        mask.get(mx, my)
    })
}

/// Integer pixel bounds of a patch box, clamped to `w x h`.
pub fn patch_bounds(b: &BBox, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let x0 = (b.x_min.max(0.0).round() as usize).min(w);
    let y0 = (b.y_min.max(0.0).round() as usize).min(h);
    let x1 = (b.x_max.round() as usize).clamp(x0, w);
    let y1 = (b.y_max.round() as usize).clamp(y0, h);
    (x0, y0, x1, y1)
}

/// Crop `patch` out of a `[1, 1, H, W]` working image and resample it to
/// `size x size` (box filter when shrinking). Values are centred on
/// `center` and multiplied by [`INPUT_GAIN`].
pub fn extract_patch(work: &Tensor, patch: &BBox, size: usize, center: f64) -> Result<Tensor> {
    let (_, _, h, w) = work.dims4()?;
    let (x0, y0, x1, y1) = patch_bounds(patch, w, h);
    let (pw, ph) = (x1 - x0, y1 - y0);
    if pw == 0 || ph == 0 {
        return Err(Error::invalid(format!("patch {patch:?} is empty inside a {h}x{w} image")));
    }
    let src = work.data();
    let mut crop = Vec::with_capacity(pw * ph);
    for y in y0..y1 {
        crop.extend_from_slice(&src[y * w + x0..y * w + x1]);
    }
    let data = resample_plane(&crop, ph, pw, size, size, Filter::Area)
        .into_iter()
        .map(|v| (v - center) * INPUT_GAIN)
        .collect();
    Tensor::new(&[1, 1, size, size], data)
}

/// Crop `patch` out of a mask and resample it to `size x size`.
pub fn extract_mask(mask: &Mask, patch: &BBox, size: usize) -> Mask {
    let (x0, y0, x1, y1) = patch_bounds(patch, mask.width, mask.height);
    resize_mask(&mask.crop(x0, y0, x1, y1), size, size)
}

/// Ground-truth boxes of a patch in the `size x size` network frame: the
/// connected components of the cropped mask covering at least
/// `min_fraction` of the patch area, all with class 1.
pub fn patch_targets(mask: &Mask, patch: &BBox, size: usize, min_fraction: f64) -> Vec<(BBox, usize)> {
    let (x0, y0, x1, y1) = patch_bounds(patch, mask.width, mask.height);
    let crop = mask.crop(x0, y0, x1, y1);
    let area = (crop.width * crop.height) as f64;
    if area == 0.0 {
        return Vec::new();
    }
    let (sx, sy) = (size as f64 / crop.width as f64, size as f64 / crop.height as f64);
    crop.components()
        .into_iter()
        .filter(|&(_, n)| n as f64 >= min_fraction * area)
        .map(|(b, _)| (b.scale(sx, sy), 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn white_and_red() {
        let white = RgbImage::from_pixel(5, 4, Rgb([255, 255, 255]));
        assert!(preprocess(&white, 8).unwrap().data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let red = RgbImage::from_pixel(3, 3, Rgb([255, 0, 0]));
        assert!(preprocess(&red, 3).unwrap().data().iter().all(|&v| (v - 0.299).abs() < 1e-12));
    }

    #[test]
    fn resize_contract() {
        let img = RgbImage::new(1024, 1024);
        assert_eq!(preprocess(&img, 512).unwrap().shape(), &[1, 1, 512, 512]);
        assert!(preprocess(&RgbImage::new(0, 4), 8).is_err());
    }

    #[test]
    fn targets_drop_slivers() {
        let mask = Mask::from_fn(64, 64, |x, y| (10..30).contains(&x) && (10..20).contains(&y) || (x == 63 && y == 0));
        let t = patch_targets(&mask, &BBox::new(0.0, 0.0, 64.0, 64.0), 32, 0.003);
        assert_eq!(t, vec![(BBox::new(5.0, 5.0, 15.0, 10.0), 1)]);
    }
}
