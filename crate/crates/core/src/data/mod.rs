//! Dataset records, on-disk layouts, the RLE mask codec, the synthetic
//! defect generator and checkpoint serialization.

mod checkpoint;
mod layouts;
mod mask;
mod raster;
mod rle;
mod synthetic;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layouts::{load_dataset, write_synthetic_dataset, Layout, SyntheticManifest};
pub use mask::Mask;
pub use raster::{read_mask, read_rgb, write_mask, write_rgb};
pub use rle::{rle_decode, rle_encode};
pub use synthetic::{generate_synthetic, ShapeKind, SyntheticSpec};

use std::path::PathBuf;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Cplid,
    Kolektor,
    Severstal,
    Synthetic,
}

/// One image with its ground truth.
#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub id: String,
    pub path: Option<PathBuf>,
    pub image: RgbImage,
    /// Binary defect mask (all classes merged).
    pub mask: Mask,
    /// Per-class masks when the source distinguishes defect classes.
    pub class_masks: Vec<(u8, Mask)>,
    /// Connected-component boxes of `mask` with their class id.
    pub boxes: Vec<(BBox, u8)>,
    pub split: Split,
    pub source: Source,
}

impl DatasetRecord {
    /// Build a record, deriving ground-truth boxes from the mask. Every box
    /// gets class 1 unless the per-class masks say otherwise.
    pub fn new(
        id: impl Into<String>,
        image: RgbImage,
        mask: Mask,
        class_masks: Vec<(u8, Mask)>,
        split: Split,
        source: Source,
    ) -> crate::Result<Self> {
        if (image.width() as usize, image.height() as usize) != (mask.width, mask.height) {
            return Err(crate::Error::Dataset(format!(
                "mask {}x{} does not match image {}x{}",
                mask.width,
                mask.height,
                image.width(),
                image.height()
            )));
        }
        let boxes = mask
            .components()
            .into_iter()
            .map(|(b, _)| {
                let (cx, cy) = b.center();
                let class = class_masks
                    .iter()
                    .find(|(_, m)| m.get(cx as usize, cy as usize))
                    .map_or(1, |(c, _)| *c);
                (b, class)
            })
            .collect();
        Ok(Self {
            id: id.into(),
            path: None,
            image,
            mask,
            class_masks,
            boxes,
            split,
            source,
        })
    }

    pub fn is_defective(&self) -> bool {
        self.mask.count() > 0
    }

    pub fn defect_fraction(&self) -> f64 {
        self.mask.fraction()
    }
}
