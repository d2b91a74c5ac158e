use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Binary raster, row-major, one byte per pixel (0 or 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape("Mask::from_vec", &[height, width], &[data.len()]));
        }
        Ok(Self {
            width,
            height,
            data: data.into_iter().map(|v| u8::from(v != 0)).collect(),
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = u8::from(f(x, y));
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }

    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::shape(
                "Mask::union_with",
                &[self.height, self.width],
                &[other.height, other.width],
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
        Ok(())
    }

    /// Pixels inside the integer-aligned region `[x0, x1) x [y0, y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        let (x1, y1) = (x1.min(self.width), y1.min(self.height));
        Mask::from_fn(x1.saturating_sub(x0), y1.saturating_sub(y0), |x, y| {
            self.get(x0 + x, y0 + y)
        })
    }

    /// Bounding boxes of 8-connected components, each with its pixel count,
    /// in raster order of each component's first pixel.
    pub fn components(&self) -> Vec<(BBox, usize)> {
        let (w, h) = (self.width, self.height);
        let mut seen = vec![false; w * h];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if seen[start] || self.data[start] == 0 {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            let mut n = 0;
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                n += 1;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if !seen[j] && self.data[j] != 0 {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
            out.push((
                BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64),
                n,
            ));
        }
        out
    }

    /// Intersection over union with another mask of the same size; two empty
    /// masks count as a perfect match.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::shape(
                "Mask::iou",
                &[self.height, self.width],
                &[other.height, other.width],
            ));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a & b) as usize;
            union += (a | b) as usize;
        }
        Ok(if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pixels_join_one_component() {
        let m = Mask::from_fn(5, 5, |x, y| x == y || (x == 4 && y == 0));
        let comps = m.components();
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0], (BBox::new(0.0, 0.0, 5.0, 5.0), 5));
        assert_eq!(comps[1], (BBox::new(4.0, 0.0, 5.0, 1.0), 1));
    }

    #[test]
    fn crop_and_count() {
        let m = Mask::from_fn(6, 4, |x, _| x >= 3);
        assert_eq!(m.count(), 12);
        let c = m.crop(2, 1, 5, 3);
        assert_eq!((c.width, c.height, c.count()), (3, 2, 4));
    }

    #[test]
    fn iou_of_halves() {
        let a = Mask::from_fn(4, 4, |x, _| x < 2);
        let b = Mask::from_fn(4, 4, |x, _| x < 3);
        assert!((a.iou(&b).unwrap() - 8.0 / 12.0).abs() < 1e-15);
        assert_eq!(Mask::zeros(2, 2).iou(&Mask::zeros(2, 2)).unwrap(), 1.0);
    }
}
