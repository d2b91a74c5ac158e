use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    encode_targets, extract_patch, match_defaults, mine_hard_negatives, multibox_grad, multibox_loss,
    MultiboxLoss, SsdNet, Stage1Detector,
};
use crate::error::Result;
use crate::geometry::BBox;
use crate::tensor::Tensor;
use crate::loss::LossBreakdown;
use crate::train::{sgd_epoch, PreparedImage, TrainConfig};

/// One stage-1 training patch.
#[derive(Debug, Clone)]
pub struct PatchExample {
    pub input: Tensor,
    pub targets: Vec<(BBox, usize)>,
}

pub fn patch_example(img: &PreparedImage, patch: usize, input_size: usize) -> Result<PatchExample> {
    Ok(PatchExample {
        input: extract_patch(&img.work, &img.grid.patches[patch].bbox, input_size, img.mean)?,
        targets: img.targets[patch].clone(),
    })
}

impl Stage1Detector {
    /// Loss and parameter gradient on one patch.
    pub fn example_grad(&self, net: &SsdNet, ex: &PatchExample) -> Result<(MultiboxLoss, SsdNet)> {
        let cfg = &self.config;
        let (out, cache) = net.forward(&ex.input)?;
        let mut assign = match_defaults(&self.defaults.boxes, &ex.targets, cfg.match_threshold);
        mine_hard_negatives(&mut assign, &out.logits, cfg.neg_pos_ratio);
        let targets = encode_targets(&assign, &self.defaults.boxes, &ex.targets)?;
        let loss = multibox_loss(&assign, &out.logits, &out.offsets, &targets, cfg.alpha);
        let (dl, doff) = multibox_grad(&assign, &out.logits, &out.offsets, &targets, cfg.alpha);
        Ok((loss, net.backward(&cache, &dl, &doff)?))
    }
}

/// Patch indices for one image and epoch: up to `max_pos` defective, the
/// rest clean, drawn without replacement.
pub(crate) fn sample_patches(img: &PreparedImage, count: usize, max_pos: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..img.grid.len()).partition(|&i| img.is_defective_patch(i));
    pos.shuffle(rng);
    neg.shuffle(rng);
    let n_pos = pos.len().min(max_pos.min(count));
    let n_neg = neg.len().min(count - n_pos);
    let mut out: Vec<usize> = pos.into_iter().take(n_pos).chain(neg.into_iter().take(n_neg)).collect();
    out.sort_unstable();
    out
}

/// Train the stage-1 network in place; returns the mean loss per epoch.
/// `on_epoch` sees each epoch's mean loss as it finishes.
pub fn train_stage1(
    det: &mut Stage1Detector,
    images: &[PreparedImage],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &LossBreakdown),
) -> Result<Vec<LossBreakdown>> {
    let mut losses = Vec::with_capacity(cfg.stage1_epochs);
    for epoch in 0..cfg.stage1_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5157_0001);
        rng.set_stream(epoch as u64);
        let mut picks: Vec<(usize, usize)> = Vec::new();
        for (i, img) in images.iter().enumerate() {
            for p in sample_patches(img, cfg.stage1_patches_per_image, cfg.stage1_patches_per_image / 2, &mut rng) {
                picks.push((i, p));
            }
        }
        picks.shuffle(&mut rng);
        let input_size = det.net.input_size;
        let examples: Vec<PatchExample> = picks
            .iter()
            .map(|&(i, p)| patch_example(&images[i], p, input_size))
            .collect::<Result<_>>()?;
        let mut net = det.net.clone();
        let this: &Stage1Detector = det;
        let loss = sgd_epoch(&mut net, &examples, cfg.batch_size, cfg.stage1_learning_rate, cfg.grad_clip, |m, e| {
            let (l, g) = this.example_grad(m, e)?;
            Ok((l.breakdown(this.config.alpha)?, g))
        })?;
        det.net = net;
        on_epoch(epoch, &loss);
        losses.push(loss);
    }
    Ok(losses)
}
