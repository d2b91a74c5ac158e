//! Stage 1: slice the preprocessed image into multi-scale patches, score
//! each patch with a compact SSD and keep the patches that look defective.

mod multibox;
mod net;
mod preprocess;
mod select;
mod train;

pub use multibox::{
    conf_loss, encode_targets, loc_loss, match_defaults, mine_hard_negatives, multibox_grad,
    multibox_loss, MatchAssignment, MultiboxLoss,
};
pub use net::{SsdCache, SsdNet, SsdOutput, LEVELS};
pub use preprocess::{
    extract_mask, extract_patch, grayscale, patch_bounds, patch_targets, preprocess, resize_mask,
    INPUT_GAIN, LUMA,
};
pub use select::{score_grid, select_patches, Detection, PatchVerdict, Stage1Detector};
pub use train::{patch_example, train_stage1, PatchExample};
pub(crate) use train::sample_patches;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    /// Side of the square network input every patch is resampled to.
    pub input_size: usize,
    pub channels1: usize,
    pub channels2: usize,
    /// Defect classes (background excluded).
    pub num_classes: usize,
    /// Default-box side per detection level, relative to `input_size`.
    pub box_scales: Vec<f64>,
    pub match_threshold: f64,
    pub neg_pos_ratio: f64,
    pub alpha: f64,
    pub selection_threshold: f64,
    pub nms_threshold: f64,
    /// Smallest mask component, as a fraction of the patch area, that makes
    /// a patch count as defective.
    pub min_defect_fraction: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            input_size: 64,
            channels1: 8,
            channels2: 16,
            num_classes: 1,
            box_scales: vec![0.25, 0.5, 1.0],
            match_threshold: 0.5,
            neg_pos_ratio: 3.0,
            alpha: 1.0,
            selection_threshold: 0.5,
            nms_threshold: 0.45,
            min_defect_fraction: 0.003,
        }
    }
}
