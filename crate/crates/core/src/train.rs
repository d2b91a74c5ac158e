//! Shared training plumbing: per-image preparation and a deterministic
//! data-parallel minibatch SGD loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{DatasetRecord, Mask};
use crate::error::{Error, Result};
use crate::geometry::{slice_image, PatchGrid};
use crate::loss::LossBreakdown;
use crate::params::{add_into, apply_sgd, clip_global_norm, scale, zeros_like, ParamSet};
use crate::stage1::{patch_targets, preprocess, resize_mask};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    /// Global gradient-norm cap per minibatch; 0 disables clipping.
    pub grad_clip: f64,
    pub stage1_learning_rate: f64,
    pub stage1_epochs: usize,
    /// Patches sampled per image per epoch; up to half are defective.
    pub stage1_patches_per_image: usize,
    pub stage2_learning_rate: f64,
    pub stage2_epochs: usize,
    pub stage2_patches_per_image: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            batch_size: 8,
            grad_clip: 5.0,
            stage1_learning_rate: 0.02,
            stage1_epochs: 8,
            stage1_patches_per_image: 16,
            stage2_learning_rate: 0.02,
            stage2_epochs: 8,
            stage2_patches_per_image: 4,
        }
    }
}

/// A training image brought to the working frame, with its patch grid and
/// per-patch stage-1 targets.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub id: String,
    /// `[1, 1, S, S]` grayscale working image.
    pub work: Tensor,
    /// Mean intensity of `work`, used to centre patch inputs.
    pub mean: f64,
    /// Ground-truth mask at working resolution.
    pub mask: Mask,
    pub grid: PatchGrid,
    /// Stage-1 ground truth per patch, in the stage-1 network frame.
    pub targets: Vec<Vec<(crate::geometry::BBox, usize)>>,
}

impl PreparedImage {
    pub fn new(record: &DatasetRecord, config: &Config) -> Result<Self> {
        let ws = config.working_size;
        let work = preprocess(&record.image, ws)?;
        let mean = work.sum() / work.len() as f64;
        let mask = resize_mask(&record.mask, ws, ws);
        let grid = slice_image((ws, ws), &config.slice)?;
        let s1 = &config.stage1;
        let targets = grid
            .patches
            .iter()
            .map(|p| patch_targets(&mask, &p.bbox, s1.input_size, s1.min_defect_fraction))
            .collect();
        Ok(Self {
            id: record.id.clone(),
            work,
            mean,
            mask,
            grid,
            targets,
        })
    }

    pub fn is_defective_patch(&self, i: usize) -> bool {
        !self.targets[i].is_empty()
    }
}

pub fn prepare_all(records: &[DatasetRecord], config: &Config) -> Result<Vec<PreparedImage>> {
    records.par_iter().map(|r| PreparedImage::new(r, config)).collect()
}

/// One pass of minibatch SGD over `examples` (in the given order).
///
/// `grad_fn` returns the loss and the parameter gradient of one example.
/// Per-example work runs in parallel; gradients are summed in example
/// order, so results do not depend on the thread count. Returns the mean
/// example loss.
pub fn sgd_epoch<M, E, F>(
    model: &mut M,
    examples: &[E],
    batch_size: usize,
    lr: f64,
    grad_clip: f64,
    grad_fn: F,
) -> Result<LossBreakdown>
where
    M: ParamSet + Clone + Send + Sync,
    E: Sync,
    F: Fn(&M, &E) -> Result<(LossBreakdown, M)> + Sync,
{
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut total = LossBreakdown::default();
    for batch in examples.chunks(batch_size) {
        let results: Vec<(LossBreakdown, M)> = batch
            .par_iter()
            .map(|e| grad_fn(model, e))
            .collect::<Result<_>>()?;
        let mut acc = zeros_like(model);
        for (loss, g) in &results {
            if !loss.total.is_finite() {
                return Err(Error::invalid("training loss became non-finite"));
            }
            total = total.add(loss);
            add_into(&mut acc, g);
        }
        scale(&mut acc, 1.0 / batch.len() as f64);
        if grad_clip > 0.0 {
            clip_global_norm(&mut acc, grad_clip);
        }
        apply_sgd(model, &acc, lr)?;
    }
    Ok(if examples.is_empty() { total } else { total.scaled(1.0 / examples.len() as f64) })
}
