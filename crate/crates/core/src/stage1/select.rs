use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{extract_patch, preprocess, SsdNet, Stage1Config};
use crate::config::Config;
use crate::error::Result;
use crate::geometry::{decode_offsets, nms_indices, slice_image, BBox, DefaultBoxSet, PatchGrid, Ratio};
use crate::tensor::{softmax, Tensor};

/// Candidate boxes considered per patch before NMS.
const MAX_CANDIDATES: usize = 50;
/// Candidates below this score are never reported.
const MIN_SCORE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class: usize,
    pub score: f64,
}

/// Stage-1 outcome for one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchVerdict {
    /// Position in the patch grid.
    pub index: usize,
    pub patch: BBox,
    pub scale_index: usize,
    pub ratio_index: usize,
    /// Highest post-NMS defect score.
    pub defect_score: f64,
    pub selected: bool,
    pub detections: Vec<Detection>,
}

/// A stage-1 network with its configuration and default boxes.
#[derive(Debug, Clone)]
pub struct Stage1Detector {
    pub net: SsdNet,
    pub config: Stage1Config,
    pub defaults: DefaultBoxSet,
}

impl Stage1Detector {
    pub fn new(net: SsdNet, config: Stage1Config, ratios: &[Ratio]) -> Self {
        let defaults = net.default_boxes(&config.box_scales, ratios);
        Self { net, config, defaults }
    }

    /// Defect score and post-NMS detections (network frame) of one patch.
    pub fn score_patch(&self, input: &Tensor) -> Result<(f64, Vec<Detection>)> {
        let (out, _) = self.net.forward(input)?;
        let mut cands: Vec<(usize, usize, f64)> = out
            .logits
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let p = softmax(l);
                let (k, s) = p
                    .iter()
                    .enumerate()
                    .skip(1)
                    .fold((1, f64::MIN), |acc, (k, &s)| if s > acc.1 { (k, s) } else { acc });
                (i, k, s)
            })
            .filter(|c| c.2 >= MIN_SCORE)
            .collect();
        cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        cands.truncate(MAX_CANDIDATES);
        let boxes: Vec<BBox> = cands
            .iter()
            .map(|&(i, _, _)| {
                let s = self.net.input_size as f64;
                decode_offsets(&out.offsets[i], &self.defaults.boxes[i]).clip(s, s)
            })
            .collect();
        let scores: Vec<f64> = cands.iter().map(|c| c.2).collect();
        let keep = nms_indices(&boxes, &scores, self.config.nms_threshold);
        let dets: Vec<Detection> = keep
            .into_iter()
            .map(|k| Detection {
                bbox: boxes[k],
                class: cands[k].1,
                score: scores[k],
            })
            .collect();
        let score = dets.first().map_or(0.0, |d| d.score);
        Ok((score, dets))
    }
}

/// Score every patch of `grid` on a preprocessed `[1, 1, S, S]` image.
/// Verdicts and their boxes stay in the working frame. Detections below the
/// selection threshold are dropped.
pub fn score_grid(work: &Tensor, grid: &PatchGrid, det: &Stage1Detector) -> Result<Vec<PatchVerdict>> {
    let mean = work.sum() / work.len() as f64;
    let thr = det.config.selection_threshold;
    let size = det.net.input_size as f64;
    grid.patches
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            let input = extract_patch(work, &p.bbox, det.net.input_size, mean)?;
            let (score, dets) = det.score_patch(&input)?;
            let (sx, sy) = (p.bbox.width() / size, p.bbox.height() / size);
            let detections = dets
                .into_iter()
                .filter(|d| d.score >= thr)
                .map(|d| Detection {
                    bbox: d.bbox.scale(sx, sy).translate(p.bbox.x_min, p.bbox.y_min),
                    ..d
                })
                .collect();
            Ok(PatchVerdict {
                index,
                patch: p.bbox,
                scale_index: p.scale_index,
                ratio_index: p.ratio_index,
                defect_score: score,
                selected: score >= thr,
                detections,
            })
        })
        .collect()
}

/// Preprocess, slice and score `image`; boxes are reported in the
/// original image frame.
pub fn select_patches(image: &RgbImage, det: &Stage1Detector, config: &Config) -> Result<Vec<PatchVerdict>> {
    let ws = config.working_size;
    let work = preprocess(image, ws)?;
    let grid = slice_image((ws, ws), &config.slice)?;
    let (sx, sy) = (image.width() as f64 / ws as f64, image.height() as f64 / ws as f64);
    let mut verdicts = score_grid(&work, &grid, det)?;
    for v in &mut verdicts {
        v.patch = v.patch.scale(sx, sy);
        for d in &mut v.detections {
            d.bbox = d.bbox.scale(sx, sy);
        }
    }
    Ok(verdicts)
}
