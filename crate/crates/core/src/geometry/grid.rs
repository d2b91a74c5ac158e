use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BBox;
use crate::error::{Error, Result};

/// Patch aspect ratio written `w:h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub w: f64,
    pub h: f64,
}

impl Ratio {
    pub const fn new(w: f64, h: f64) -> Self {
        Self { w, h }
    }

    /// `w / h`.
    pub fn aspect(&self) -> f64 {
        self.w / self.h
    }

    /// `(width, height)` of a box with area `side^2` and this aspect.
    pub fn dims(&self, side: f64) -> (f64, f64) {
        let a = self.aspect().sqrt();
        (side * a, side / a)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.w, self.h)
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("ratio `{s}` is not of the form w:h"));
        let (w, h) = s.trim().split_once(':').ok_or_else(bad)?;
        let w: f64 = w.trim().parse().map_err(|_| bad())?;
        let h: f64 = h.trim().parse().map_err(|_| bad())?;
        if !(w > 0.0 && h > 0.0) {
            return Err(bad());
        }
        Ok(Self { w, h })
    }
}

/// Multi-scale slicing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceConfig {
    /// Patch side lengths (area = side²).
    pub scales: Vec<usize>,
    pub ratios: Vec<Ratio>,
    /// Tiling stride as a fraction of the patch extent along each axis.
    pub stride_fraction: f64,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            scales: vec![64, 128, 256],
            ratios: vec![Ratio::new(1.0, 1.0), Ratio::new(1.0, 2.0), Ratio::new(2.0, 1.0)],
            stride_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub bbox: BBox,
    pub scale_index: usize,
    pub ratio_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    /// `(height, width)` of the sliced image.
    pub image_size: (usize, usize),
    pub patches: Vec<Patch>,
    pub scales: Vec<usize>,
    pub ratios: Vec<Ratio>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Window origins along one axis: regular steps, plus a final window shifted
/// inward so it ends flush with the edge.
fn origins(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos + size <= extent {
        out.push(pos);
        pos += stride;
    }
    let last = extent - size;
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Tile an `h x w` image into patches at every (scale, ratio).
///
/// Patches keep their declared size except when it exceeds the image, in
/// which case that axis is cut to the image extent. Ordering is by scale,
/// then row, then column, then ratio.
pub fn slice_image(image_size: (usize, usize), config: &SliceConfig) -> Result<PatchGrid> {
    let (h, w) = image_size;
    let min_scale = *config
        .scales
        .iter()
        .min()
        .ok_or_else(|| Error::invalid("no slice scales configured"))?;
    if config.ratios.is_empty() {
        return Err(Error::invalid("no slice ratios configured"));
    }
    if !(config.stride_fraction > 0.0) {
        return Err(Error::invalid("stride fraction must be positive"));
    }
    if h < min_scale || w < min_scale {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            min_scale,
        });
    }

    let mut keyed = Vec::new();
    for (si, &scale) in config.scales.iter().enumerate() {
        for (ri, ratio) in config.ratios.iter().enumerate() {
            let (pw, ph) = ratio.dims(scale as f64);
            let pw = (pw.round() as usize).clamp(1, w);
            let ph = (ph.round() as usize).clamp(1, h);
            let sx = ((pw as f64 * config.stride_fraction).round() as usize).max(1);
            let sy = ((ph as f64 * config.stride_fraction).round() as usize).max(1);
            for (row, &y) in origins(h, ph, sy).iter().enumerate() {
                for (col, &x) in origins(w, pw, sx).iter().enumerate() {
                    let bbox = BBox::new(x as f64, y as f64, (x + pw) as f64, (y + ph) as f64);
                    keyed.push((
                        (si, row, col, ri),
                        Patch {
                            bbox,
                            scale_index: si,
                            ratio_index: ri,
                        },
                    ));
                }
            }
        }
    }
    keyed.sort_by_key(|(k, _)| *k);
    Ok(PatchGrid {
        image_size,
        patches: keyed.into_iter().map(|(_, p)| p).collect(),
        scales: config.scales.clone(),
        ratios: config.ratios.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(scale: usize) -> SliceConfig {
        SliceConfig {
            scales: vec![scale],
            ratios: vec![Ratio::new(1.0, 1.0)],
            stride_fraction: 0.5,
        }
    }

    #[test]
    fn square_tiling_count() {
        let g = slice_image((256, 256), &single(64)).unwrap();
        assert_eq!(g.len(), 49);
    }

    #[test]
    fn exact_fit_gives_one_patch() {
        let g = slice_image((64, 64), &single(64)).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.patches[0].bbox, BBox::new(0.0, 0.0, 64.0, 64.0));
    }

    #[test]
    fn last_patch_is_flush_with_edge() {
        let g = slice_image((100, 100), &single(64)).unwrap();
        let xs: Vec<f64> = g.patches.iter().map(|p| p.bbox.x_min).collect();
        assert!(xs.contains(&36.0));
        assert!(g.patches.iter().all(|p| p.bbox.width() == 64.0 && p.bbox.x_max <= 100.0));
    }

    #[test]
    fn too_small_image_is_rejected() {
        let err = slice_image((50, 300), &SliceConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ImageTooSmall { min_scale: 64, .. }));
    }

    #[test]
    fn declared_area_is_respected() {
        let g = slice_image((512, 512), &SliceConfig::default()).unwrap();
        for p in &g.patches {
            let s = g.scales[p.scale_index] as f64;
            let area = p.bbox.area();
            // integer rounding of each side
            assert!((area - s * s).abs() <= s * 2.0 + 1.0, "{area} vs {}", s * s);
        }
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("1:2".parse::<Ratio>().unwrap(), Ratio::new(1.0, 2.0));
        assert!("2".parse::<Ratio>().is_err());
        assert!("0:1".parse::<Ratio>().is_err());
    }
}
