use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Mask;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::loss::{bce, bce_grad};
use crate::params::{visit_conv, visit_conv_mut, visit_linear, visit_linear_mut, ParamSet};
use crate::tensor::{
    bilinear_taps, conv2d, conv2d_backward, linear, linear_backward, relu, relu_backward, sigmoid,
    upsample_nearest, upsample_nearest_backward, Border, ConvKernel, Linear, Taps, Tensor,
};

/// Box-head ROI Align output side.
pub const ROI_POOL: usize = 7;
/// Mask-head ROI Align output side.
pub const MASK_POOL: usize = 14;
/// Side of the per-roi mask after the 2x upsample.
pub const MASK_SIZE: usize = 2 * MASK_POOL;

/// Pyramid level for a roi: `floor(log2(sqrt(area) / 16))`, clamped to
/// the six levels. Regions under 32 px pool from the finest level.
pub fn roi_level(roi: &BBox) -> usize {
    let side = roi.area().max(1e-12).sqrt();
    (side / 16.0).log2().floor().clamp(0.0, 5.0) as usize
}

/// Per-pixel defect probabilities over a patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMask {
    pub width: usize,
    pub height: usize,
    /// Row-major probabilities in `[0, 1]`.
    pub values: Vec<f64>,
}

impl SegmentationMask {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape("SegmentationMask", &[values.len()], &[height, width]));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("segmentation probabilities must lie in [0, 1]"));
        }
        Ok(Self { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    /// Pixels with probability `>= threshold`.
    pub fn binarize(&self, threshold: f64) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| self.values[y * self.width + x] >= threshold)
    }
}

/// Mean per-pixel binary cross-entropy between predicted probabilities and
/// a binary mask of the same size.
pub fn patch_loss(pred: &SegmentationMask, gt: &Mask) -> Result<f64> {
    check_dims(pred, gt)?;
    let g = gt.as_slice();
    let sum: f64 = pred
        .values
        .iter()
        .zip(g)
        .map(|(&p, &t)| bce(p, f64::from(t)))
        .sum();
    Ok(sum / pred.values.len() as f64)
}

/// Gradient of [`patch_loss`] with respect to each probability.
pub fn patch_loss_grad(pred: &SegmentationMask, gt: &Mask) -> Result<Vec<f64>> {
    check_dims(pred, gt)?;
    let n = pred.values.len() as f64;
    Ok(pred
        .values
        .iter()
        .zip(gt.as_slice())
        .map(|(&p, &t)| bce_grad(p, f64::from(t)) / n)
        .collect())
}

fn check_dims(pred: &SegmentationMask, gt: &Mask) -> Result<()> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::shape(
            "patch_loss",
            &[pred.height, pred.width],
            &[gt.height, gt.width],
        ));
    }
    Ok(())
}

/// Classification (background / defect) and box-refinement head on
/// `ROI_POOL x ROI_POOL` features.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiHead {
    pub fc: Linear,
    pub cls: Linear,
    pub bbox: Linear,
}

#[derive(Debug, Clone)]
pub struct RoiHeadCache {
    x: Vec<f64>,
    z: Vec<f64>,
    h: Vec<f64>,
}

impl RoiHead {
    pub fn new<R: Rng + ?Sized>(channels: usize, hidden: usize, rng: &mut R) -> Self {
        let inp = channels * ROI_POOL * ROI_POOL;
        Self {
            fc: Linear::normal(hidden, inp, (2.0 / inp as f64).sqrt(), rng),
            cls: Linear::normal(2, hidden, 0.01, rng),
            bbox: Linear::normal(4, hidden, 0.001, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fc.out_features()
    }

    /// Class logits and box offsets (relative to the roi).
    pub fn forward(&self, feat: &[f64]) -> Result<(Vec<f64>, [f64; 4], RoiHeadCache)> {
        let z = linear(feat, &self.fc)?;
        let h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
        let logits = linear(&h, &self.cls)?;
        let o = linear(&h, &self.bbox)?;
        Ok((
            logits,
            [o[0], o[1], o[2], o[3]],
            RoiHeadCache { x: feat.to_vec(), z, h },
        ))
    }

    /// Gradient on the pooled features; parameter gradients accumulate into
    /// `grads`.
    pub fn backward(&self, cache: &RoiHeadCache, d_logits: &[f64], d_offsets: &[f64; 4], grads: &mut RoiHead) -> Result<Vec<f64>> {
        let gc = linear_backward(&cache.h, &self.cls, d_logits)?;
        gc.accumulate_into(&mut grads.cls);
        let gb = linear_backward(&cache.h, &self.bbox, d_offsets)?;
        gb.accumulate_into(&mut grads.bbox);
        let g_z: Vec<f64> = gc
            .grad_input
            .iter()
            .zip(&gb.grad_input)
            .zip(&cache.z)
            .map(|((a, b), &z)| if z > 0.0 { a + b } else { 0.0 })
            .collect();
        let gf = linear_backward(&cache.x, &self.fc, &g_z)?;
        gf.accumulate_into(&mut grads.fc);
        Ok(gf.grad_input)
    }
}

impl ParamSet for RoiHead {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        visit_linear("fc", &self.fc, f);
        visit_linear("cls", &self.cls, f);
        visit_linear("bbox", &self.bbox, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_linear_mut("fc", &mut self.fc, f);
        visit_linear_mut("cls", &mut self.cls, f);
        visit_linear_mut("bbox", &mut self.bbox, f);
    }
}

/// Per-roi mask head: two 3x3 convs with relu on `MASK_POOL` features, a
/// nearest 2x upsample and a 1x1 conv to one sigmoid channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskHead {
    pub conv1: ConvKernel,
    pub conv2: ConvKernel,
    pub out: ConvKernel,
}

#[derive(Debug, Clone)]
pub struct MaskHeadCache {
    x: Tensor,
    z1: Tensor,
    h1: Tensor,
    z2: Tensor,
    h2: Tensor,
    u: Tensor,
    probs: Vec<f64>,
}

impl MaskHead {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self {
            conv1: ConvKernel::he(channels, channels, 3, 1, 1, rng),
            conv2: ConvKernel::he(channels, channels, 3, 1, 1, rng),
            out: ConvKernel::normal(1, channels, 1, 1, 0, 0.1, rng),
        }
    }

    /// `MASK_SIZE x MASK_SIZE` probabilities for `[1, C, MASK_POOL, MASK_POOL]` features.
    pub fn forward(&self, feat: &Tensor) -> Result<(Vec<f64>, MaskHeadCache)> {
        let z1 = conv2d(feat, &self.conv1)?;
        let h1 = relu(&z1);
        let z2 = conv2d(&h1, &self.conv2)?;
        let h2 = relu(&z2);
        let (_, _, h, w) = h2.dims4()?;
        let u = upsample_nearest(&h2, 2 * h, 2 * w)?;
        let logits = conv2d(&u, &self.out)?;
        let probs: Vec<f64> = logits.data().iter().map(|&v| sigmoid(v)).collect();
        let cache = MaskHeadCache {
            x: feat.clone(),
            z1,
            h1,
            z2,
            h2,
            u,
            probs: probs.clone(),
        };
        Ok((probs, cache))
    }

    pub fn backward(&self, cache: &MaskHeadCache, g_probs: &[f64], grads: &mut MaskHead) -> Result<Tensor> {
        let g_logit: Vec<f64> = cache
            .probs
            .iter()
            .zip(g_probs)
            .map(|(&p, &g)| g * p * (1.0 - p))
            .collect();
        let (_, _, uh, uw) = cache.u.dims4()?;
        let c = conv2d_backward(&cache.u, &self.out, &Tensor::new(&[1, 1, uh, uw], g_logit)?)?;
        c.accumulate_into(&mut grads.out);
        let g_h2 = upsample_nearest_backward(cache.h2.shape(), &c.grad_input)?;
        let g_z2 = relu_backward(&cache.z2, &g_h2)?;
        let c2 = conv2d_backward(&cache.h1, &self.conv2, &g_z2)?;
        c2.accumulate_into(&mut grads.conv2);
        let g_z1 = relu_backward(&cache.z1, &c2.grad_input)?;
        let c1 = conv2d_backward(&cache.x, &self.conv1, &g_z1)?;
        c1.accumulate_into(&mut grads.conv1);
        Ok(c1.grad_input)
    }
}

impl ParamSet for MaskHead {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        visit_conv("conv1", &self.conv1, f);
        visit_conv("conv2", &self.conv2, f);
        visit_conv("out", &self.out, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_conv_mut("conv1", &mut self.conv1, f);
        visit_conv_mut("conv2", &mut self.conv2, f);
        visit_conv_mut("out", &mut self.out, f);
    }
}

/// Which roi mask supplied each canvas pixel, and how it was sampled.
#[derive(Debug, Clone)]
pub struct PasteTrace {
    winners: Vec<Option<(usize, Taps)>>,
}

/// Paste `MASK_SIZE²` roi masks into a `size x size` canvas. A pixel whose
/// centre lies inside a roi samples that roi's mask bilinearly (clamped at
/// the mask border); overlapping rois combine by per-pixel max and pixels
/// outside every roi are zero.
pub fn paste_masks(masks: &[(BBox, Vec<f64>)], size: usize) -> (Vec<f64>, PasteTrace) {
    let m = MASK_SIZE as f64;
    let mut canvas = vec![0.0; size * size];
    let mut winners: Vec<Option<(usize, Taps)>> = vec![None; size * size];
    for (r, (b, probs)) in masks.iter().enumerate() {
        if !(b.width() > 0.0 && b.height() > 0.0) {
            continue;
        }
        let y0 = b.y_min.floor().max(0.0) as usize;
        let x0 = b.x_min.floor().max(0.0) as usize;
        let y1 = (b.y_max.ceil().max(0.0) as usize).min(size);
        let x1 = (b.x_max.ceil().max(0.0) as usize).min(size);
        for y in y0..y1 {
            let cy = y as f64 + 0.5;
            if cy < b.y_min || cy >= b.y_max {
                continue;
            }
            let my = (cy - b.y_min) / b.height() * m - 0.5;
            for x in x0..x1 {
                let cx = x as f64 + 0.5;
                if cx < b.x_min || cx >= b.x_max {
                    continue;
                }
                let mx = (cx - b.x_min) / b.width() * m - 0.5;
                let taps = bilinear_taps(MASK_SIZE, MASK_SIZE, my, mx, Border::Clamp);
                let v = taps.apply(probs);
                let i = y * size + x;
                if winners[i].is_none() || v > canvas[i] {
                    canvas[i] = v;
                    winners[i] = Some((r, taps));
                }
            }
        }
    }
    (canvas, PasteTrace { winners })
}

/// Route a canvas gradient back to the roi mask that won each pixel.
pub fn paste_masks_backward(trace: &PasteTrace, n_masks: usize, g_canvas: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; MASK_SIZE * MASK_SIZE]; n_masks];
    for (w, &g) in trace.winners.iter().zip(g_canvas) {
        if let Some((r, taps)) = w {
            taps.scatter(&mut out[*r], g);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_loss_constant_half_is_ln2() {
        let p = SegmentationMask::new(4, 3, vec![0.5; 12]).unwrap();
        let g = Mask::from_fn(4, 3, |x, y| (x + y) % 2 == 0);
        assert!((patch_loss(&p, &g).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn patch_loss_dimension_mismatch() {
        let p = SegmentationMask::zeros(4, 4);
        assert!(patch_loss(&p, &Mask::zeros(4, 5)).is_err());
    }

    #[test]
    fn roi_levels() {
        assert_eq!(roi_level(&BBox::new(0.0, 0.0, 8.0, 8.0)), 0);
        assert_eq!(roi_level(&BBox::new(0.0, 0.0, 32.0, 32.0)), 1);
        assert_eq!(roi_level(&BBox::new(0.0, 0.0, 64.0, 64.0)), 2);
        assert_eq!(roi_level(&BBox::new(0.0, 0.0, 5000.0, 5000.0)), 5);
    }

    #[test]
    fn paste_max_combines_and_leaves_outside_zero() {
        let a = (BBox::new(0.0, 0.0, 4.0, 4.0), vec![0.3; MASK_SIZE * MASK_SIZE]);
        let b = (BBox::new(2.0, 2.0, 6.0, 6.0), vec![0.7; MASK_SIZE * MASK_SIZE]);
        let (c, trace) = paste_masks(&[a, b], 8);
        assert!((c[0] - 0.3).abs() < 1e-12);
        assert!((c[3 * 8 + 3] - 0.7).abs() < 1e-12);
        assert_eq!(c[7 * 8 + 7], 0.0);
        let g = paste_masks_backward(&trace, 2, &vec![1.0; 64]);
        // Every pixel covered by a roi pushes a unit of gradient into its winner.
        let total: f64 = g.iter().flatten().sum();
        assert!((total - (16.0 + 16.0 - 4.0)).abs() < 1e-9);
    }
}
