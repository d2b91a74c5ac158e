use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{Stage2Detector, Stage2Example};
use crate::error::Result;
use crate::stage1::{extract_mask, extract_patch, patch_targets, sample_patches};
use crate::loss::LossBreakdown;
use crate::train::{sgd_epoch, PreparedImage, TrainConfig};

/// Stage-2 example for patch `patch` of a prepared image. Ground-truth
/// boxes are the mask components covering at least `min_fraction` of the
/// patch.
pub fn stage2_example(img: &PreparedImage, patch: usize, input_size: usize, min_fraction: f64) -> Result<Stage2Example> {
    let bbox = img.grid.patches[patch].bbox;
    Ok(Stage2Example {
        input: extract_patch(&img.work, &bbox, input_size, img.mean)?,
        mask: extract_mask(&img.mask, &bbox, input_size),
        boxes: patch_targets(&img.mask, &bbox, input_size, min_fraction)
            .into_iter()
            .map(|(b, _)| b)
            .collect(),
    })
}

/// Train the stage-2 network in place on mostly defective patches (the
/// ones stage 1 is expected to forward); returns the mean loss per epoch.
/// `on_epoch` sees each epoch's mean loss as it finishes.
pub fn train_stage2(
    det: &mut Stage2Detector,
    images: &[PreparedImage],
    cfg: &TrainConfig,
    min_fraction: f64,
    mut on_epoch: impl FnMut(usize, &LossBreakdown),
) -> Result<Vec<LossBreakdown>> {
    let count = cfg.stage2_patches_per_image;
    let max_pos = (3 * count).div_ceil(4);
    let mut losses = Vec::with_capacity(cfg.stage2_epochs);
    for epoch in 0..cfg.stage2_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5157_0002);
        rng.set_stream(epoch as u64);
        let mut picks: Vec<(usize, usize)> = Vec::new();
        for (i, img) in images.iter().enumerate() {
            for p in sample_patches(img, count, max_pos, &mut rng) {
                picks.push((i, p));
            }
        }
        picks.shuffle(&mut rng);
        let input_size = det.net.input_size;
        let examples: Vec<Stage2Example> = picks
            .iter()
            .map(|&(i, p)| stage2_example(&images[i], p, input_size, min_fraction))
            .collect::<Result<_>>()?;
        let mut net = det.net.clone();
        let this: &Stage2Detector = det;
        let loss = sgd_epoch(&mut net, &examples, cfg.batch_size, cfg.stage2_learning_rate, cfg.grad_clip, |m, e| {
            this.example_grad(m, e, None)
        })?;
        det.net = net;
        on_epoch(epoch, &loss);
        losses.push(loss);
    }
    Ok(losses)
}
