//! Stage 2: segment a selected patch with a compact region-based detector.

mod backbone;
mod deform;
mod heads;
mod model;
mod pyramid;
mod roi_align;
mod rpn;
mod train;

pub use backbone::{Backbone, BackboneCache, STAGES};
pub use deform::{deformable_conv2d, deformable_conv2d_backward, DeformGrads};
pub use heads::{
    paste_masks, paste_masks_backward, patch_loss, patch_loss_grad, roi_level, MaskHead, MaskHeadCache,
    PasteTrace, RoiHead, RoiHeadCache, SegmentationMask, MASK_POOL, MASK_SIZE, ROI_POOL,
};
pub use model::{PatchSegmentation, Stage2Detector, Stage2Example, Stage2Net};
pub use pyramid::{build_pyramid, build_pyramid_backward, FeaturePyramid, Fpn};
pub use roi_align::{roi_align, roi_align_backward, roi_align_backward_into};
pub use rpn::{rpn_anchors, rpn_loss, rpn_propose, Proposal, RpnCache, RpnHead, RpnLoss, RpnOutput};
pub use train::{stage2_example, train_stage2};

use serde::{Deserialize, Serialize};

/// Smallest input side that survives six stride-2 stages.
pub const MIN_INPUT: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    /// Side of the square network input every selected patch is resampled to.
    pub input_size: usize,
    pub channels: usize,
    pub fpn_channels: usize,
    /// Width of the box head's hidden layer.
    pub hidden: usize,
    /// Anchor side on the finest level, in input pixels; doubles per level.
    pub anchor_size: f64,
    pub rpn_nms: f64,
    /// Proposals kept per patch at inference.
    pub top_k: usize,
    /// Proposals kept per patch during training.
    pub train_top_k: usize,
    pub samples_per_bin: usize,
    pub detection_threshold: f64,
    pub detection_nms: f64,
    pub mask_threshold: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            input_size: 64,
            channels: 8,
            fpn_channels: 8,
            hidden: 32,
            anchor_size: 8.0,
            rpn_nms: 0.7,
            top_k: 100,
            train_top_k: 24,
            samples_per_bin: 2,
            detection_threshold: 0.5,
            detection_nms: 0.5,
            mask_threshold: 0.5,
        }
    }
}
