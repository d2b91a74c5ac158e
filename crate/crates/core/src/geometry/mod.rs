//! Axis-aligned boxes, overlap, patch tiling, default boxes, offset coding
//! and non-maximum suppression.
//!
//! Coordinates are continuous pixel coordinates: pixel `(r, c)` covers
//! `[c, c+1) x [r, r+1)`, so the box `(0, 0, w, h)` is a whole `w x h` image.

mod anchors;
mod coding;
mod grid;
mod matching;
mod nms;

pub use anchors::{DefaultBoxSet, DefaultOrigin, LevelSpec};
pub use coding::{decode_offsets, encode_offsets};
pub use grid::{slice_image, Patch, PatchGrid, Ratio, SliceConfig};
pub use matching::match_boxes;
pub use nms::{nms, nms_indices};

use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle with `x_min <= x_max` and `y_min <= y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        debug_assert!(x_min <= x_max && y_min <= y_max, "inverted box");
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let b = BBox {
            x_min: self.x_min.max(other.x_min),
            y_min: self.y_min.max(other.y_min),
            x_max: self.x_max.min(other.x_max),
            y_max: self.y_max.min(other.y_max),
        };
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }

    /// Clip into `[0, w] x [0, h]`.
    pub fn clip(&self, w: f64, h: f64) -> BBox {
        let x_min = self.x_min.clamp(0.0, w);
        let y_min = self.y_min.clamp(0.0, h);
        BBox {
            x_min,
            y_min,
            x_max: self.x_max.clamp(x_min, w),
            y_max: self.y_max.clamp(y_min, h),
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    /// Scale x and y coordinates independently about the origin.
    pub fn scale(&self, sx: f64, sy: f64) -> BBox {
        BBox::new(self.x_min * sx, self.y_min * sy, self.x_max * sx, self.y_max * sy)
    }
}

/// Jaccard overlap `|A ∩ B| / |A ∪ B|`; zero when the union has zero area.
pub fn jaccard(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jaccard_basic_cases() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(jaccard(&a, &a), 1.0);
        assert_eq!(jaccard(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        let b = BBox::new(1.0, 1.0, 3.0, 3.0);
        assert!((jaccard(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn zero_area_boxes_have_zero_overlap() {
        let p = BBox::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(jaccard(&p, &p), 0.0);
    }

    #[test]
    fn clip_keeps_box_ordered() {
        let b = BBox::new(-3.0, 2.0, 4.0, 20.0).clip(3.0, 10.0);
        assert_eq!(b, BBox::new(0.0, 2.0, 3.0, 10.0));
        let outside = BBox::new(5.0, 5.0, 6.0, 6.0).clip(3.0, 3.0);
        assert_eq!(outside.area(), 0.0);
    }
}
