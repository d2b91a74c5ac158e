use rand::Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneCache, STAGES};
use super::heads::{
    paste_masks, paste_masks_backward, patch_loss, patch_loss_grad, roi_level, MaskHead, RoiHead,
    SegmentationMask, MASK_POOL, ROI_POOL,
};
use super::pyramid::{build_pyramid, build_pyramid_backward, FeaturePyramid, Fpn};
use super::roi_align::{roi_align, roi_align_backward_into};
use super::rpn::{rpn_anchors, rpn_loss, rpn_propose, Proposal, RpnHead};
use super::{Stage2Config, MIN_INPUT};
use crate::data::Mask;
use crate::error::{Error, Result};
use crate::geometry::{decode_offsets, encode_offsets, match_boxes, nms_indices, BBox, DefaultBoxSet, Ratio};
use crate::loss::{combined_loss, smooth_l1, smooth_l1_grad, LossBreakdown};
use crate::params::{zeros_like, ParamSet};
use crate::stage1::Detection;
use crate::tensor::{log_softmax, softmax, Tensor};

/// IoU at which anchors and rois count as foreground.
const FG_IOU: f64 = 0.5;
/// Hard-negative budget of the RPN, per positive anchor.
const RPN_NEG_RATIO: f64 = 3.0;
/// Foreground rois that train the mask head per patch.
const MAX_MASK_ROIS: usize = 8;
/// Background regions kept per foreground region when training the heads.
const ROI_NEG_RATIO: usize = 3;

/// The full stage-2 network.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Net {
    pub input_size: usize,
    pub backbone: Backbone,
    pub fpn: Fpn,
    pub rpn: RpnHead,
    pub roi_head: RoiHead,
    pub mask_head: MaskHead,
}

/// Forward state shared by training and inference.
struct Features {
    feats: Vec<Tensor>,
    cache: BackboneCache,
    pyramid: FeaturePyramid,
    /// Pyramid levels as `[C, H, W]` maps for ROI Align.
    maps: Vec<Tensor>,
}

impl Stage2Net {
    pub fn new<R: Rng + ?Sized>(cfg: &Stage2Config, anchors_per_cell: usize, rng: &mut R) -> Result<Self> {
        if cfg.input_size < MIN_INPUT {
            return Err(Error::PyramidTooSmall {
                got: cfg.input_size,
                required: MIN_INPUT,
            });
        }
        Ok(Self {
            input_size: cfg.input_size,
            backbone: Backbone::new(cfg.channels, rng),
            fpn: Fpn::new(cfg.channels, cfg.fpn_channels, rng),
            rpn: RpnHead::new(cfg.fpn_channels, anchors_per_cell, rng),
            roi_head: RoiHead::new(cfg.fpn_channels, cfg.hidden, rng),
            mask_head: MaskHead::new(cfg.fpn_channels, rng),
        })
    }

    /// `(rows, cols)` of each pyramid level.
    pub fn level_sizes(&self) -> Vec<(usize, usize)> {
        (0..STAGES)
            .map(|k| {
                let s = self.input_size.div_ceil(1 << (k + 1));
                (s, s)
            })
            .collect()
    }

    /// Input pixels per cell on each level.
    fn strides(&self) -> Vec<f64> {
        self.level_sizes()
            .iter()
            .map(|&(s, _)| self.input_size as f64 / s as f64)
            .collect()
    }

    pub fn anchors(&self, anchor_size: f64, ratios: &[Ratio]) -> DefaultBoxSet {
        rpn_anchors(self.input_size, &self.level_sizes(), anchor_size, ratios)
    }

    /// `[input_size, channels, fpn_channels, hidden, anchors per cell]`.
    pub fn arch(&self) -> Tensor {
        let v = [
            self.input_size,
            self.backbone.channels(),
            self.fpn.channels(),
            self.roi_head.hidden(),
            self.rpn.anchors_per_cell(),
        ];
        Tensor::new(&[5], v.iter().map(|&x| x as f64).collect()).expect("5 values")
    }

    /// Zero-initialised network with the architecture recorded by [`Stage2Net::arch`].
    pub fn from_arch(arch: &Tensor) -> Result<Self> {
        let v: Vec<usize> = arch.data().iter().map(|&x| x as usize).collect();
        if v.len() != 5 {
            return Err(Error::Checkpoint("stage-2 architecture entry must hold 5 values".into()));
        }
        let cfg = Stage2Config {
            input_size: v[0],
            channels: v[1],
            fpn_channels: v[2],
            hidden: v[3],
            ..Stage2Config::default()
        };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Self::new(&cfg, v[4], &mut rng)?;
        net.visit_mut(&mut |_, t| t.fill(0.0));
        Ok(net)
    }

    fn features(&self, input: &Tensor) -> Result<Features> {
        let (_, c, h, w) = input.dims4()?;
        if h.min(w) < MIN_INPUT {
            return Err(Error::PyramidTooSmall {
                got: h.min(w),
                required: MIN_INPUT,
            });
        }
        if (c, h, w) != (1, self.input_size, self.input_size) {
            return Err(Error::shape("Stage2Net", input.shape(), &[1, 1, self.input_size, self.input_size]));
        }
        let (feats, cache) = self.backbone.forward(input)?;
        let pyramid = build_pyramid(&feats, &self.fpn)?;
        let maps = pyramid
            .levels
            .iter()
            .map(|l| {
                let s = l.shape();
                l.clone().reshape(&[s[1], s[2], s[3]])
            })
            .collect::<Result<_>>()?;
        Ok(Features {
            feats,
            cache,
            pyramid,
            maps,
        })
    }

    /// The feature pyramid of one `[1, 1, P, P]` patch.
    pub fn pyramid(&self, input: &Tensor) -> Result<FeaturePyramid> {
        Ok(self.features(input)?.pyramid)
    }
}

impl ParamSet for Stage2Net {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.backbone.visit(&mut |n, t| f(&format!("backbone.{n}"), t));
        self.fpn.visit(&mut |n, t| f(&format!("fpn.{n}"), t));
        self.rpn.visit(&mut |n, t| f(&format!("rpn.{n}"), t));
        self.roi_head.visit(&mut |n, t| f(&format!("roi_head.{n}"), t));
        self.mask_head.visit(&mut |n, t| f(&format!("mask_head.{n}"), t));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.backbone.visit_mut(&mut |n, t| f(&format!("backbone.{n}"), t));
        self.fpn.visit_mut(&mut |n, t| f(&format!("fpn.{n}"), t));
        self.rpn.visit_mut(&mut |n, t| f(&format!("rpn.{n}"), t));
        self.roi_head.visit_mut(&mut |n, t| f(&format!("roi_head.{n}"), t));
        self.mask_head.visit_mut(&mut |n, t| f(&format!("mask_head.{n}"), t));
    }
}

/// One stage-2 training patch in the network frame.
#[derive(Debug, Clone)]
pub struct Stage2Example {
    /// `[1, 1, P, P]` network input.
    pub input: Tensor,
    /// Ground-truth mask at `P x P`.
    pub mask: Mask,
    /// Ground-truth defect boxes at `P x P`.
    pub boxes: Vec<BBox>,
}

/// Stage-2 result for one patch, in the network frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSegmentation {
    pub detections: Vec<Detection>,
    pub mask: SegmentationMask,
}

/// A stage-2 network with its configuration and anchors.
#[derive(Debug, Clone)]
pub struct Stage2Detector {
    pub net: Stage2Net,
    pub config: Stage2Config,
    pub anchors: DefaultBoxSet,
}

impl Stage2Detector {
    pub fn new(net: Stage2Net, config: Stage2Config, ratios: &[Ratio]) -> Self {
        let anchors = net.anchors(config.anchor_size, ratios);
        Self { net, config, anchors }
    }

    /// Region proposals for one patch.
    pub fn propose(&self, input: &Tensor) -> Result<Vec<Proposal>> {
        let f = self.net.features(input)?;
        let (out, _) = self.net.rpn.forward(&f.pyramid)?;
        Ok(rpn_propose(&out, &self.anchors, self.net.input_size, self.config.rpn_nms, self.config.top_k))
    }

    /// Detections and the pasted probability canvas for one patch.
    pub fn segment_patch(&self, input: &Tensor) -> Result<PatchSegmentation> {
        let net = &self.net;
        let cfg = &self.config;
        let p = net.input_size;
        let size = p as f64;
        let f = net.features(input)?;
        let (out, _) = net.rpn.forward(&f.pyramid)?;
        let props = rpn_propose(&out, &self.anchors, p, cfg.rpn_nms, cfg.top_k);
        let strides = net.strides();
        let mut boxes = Vec::new();
        let mut scores = Vec::new();
        for prop in &props {
            let k = prop.level;
            let feat = roi_align(&f.maps[k], &prop.bbox.scale(1.0 / strides[k], 1.0 / strides[k]), (ROI_POOL, ROI_POOL), cfg.samples_per_bin)?;
            let (logits, off, _) = net.roi_head.forward(feat.data())?;
            let score = softmax(&logits)[1];
            if score < cfg.detection_threshold {
                continue;
            }
            let b = decode_offsets(&off, &prop.bbox).clip(size, size);
            if b.width() >= 1.0 && b.height() >= 1.0 {
                boxes.push(b);
                scores.push(score);
            }
        }
        let keep = nms_indices(&boxes, &scores, cfg.detection_nms);
        let mut detections = Vec::with_capacity(keep.len());
        let mut masks = Vec::with_capacity(keep.len());
        for k in keep {
            let b = boxes[k];
            let feat = roi_align(&f.maps[0], &b.scale(1.0 / strides[0], 1.0 / strides[0]), (MASK_POOL, MASK_POOL), cfg.samples_per_bin)?;
            let c = feat.shape()[0];
            let (probs, _) = net.mask_head.forward(&feat.reshape(&[1, c, MASK_POOL, MASK_POOL])?)?;
            masks.push((b, probs));
            detections.push(Detection {
                bbox: b,
                class: 1,
                score: scores[k],
            });
        }
        let (canvas, _) = paste_masks(&masks, p);
        Ok(PatchSegmentation {
            detections,
            mask: SegmentationMask::new(p, p, canvas)?,
        })
    }

    /// Loss breakdown and parameter gradient on one patch. With `rois` the
    /// second stage runs on exactly those regions instead of ground truth
    /// plus fresh proposals, which keeps the loss a smooth function of the
    /// parameters for gradient checks.
    pub fn example_grad(&self, net: &Stage2Net, ex: &Stage2Example, rois: Option<&[BBox]>) -> Result<(LossBreakdown, Stage2Net)> {
        let cfg = &self.config;
        let p = net.input_size;
        if (ex.mask.width, ex.mask.height) != (p, p) {
            return Err(Error::shape("Stage2Example mask", &[ex.mask.height, ex.mask.width], &[p, p]));
        }
        let f = net.features(&ex.input)?;
        let (out, rcache) = net.rpn.forward(&f.pyramid)?;
        let rl = rpn_loss(&out, &self.anchors, &ex.boxes, FG_IOU, RPN_NEG_RATIO)?;
        // Training regions are the ground truth plus fresh proposals, matched
        // to ground truth like the stage-1 default boxes; background regions
        // beyond ROI_NEG_RATIO per foreground one are dropped in score order.
        let (rois, labels): (Vec<BBox>, Vec<Option<usize>>) = match rois {
            Some(r) => {
                let m = match_boxes(r, &ex.boxes, FG_IOU);
                (r.to_vec(), m)
            }
            None => {
                let mut v = ex.boxes.clone();
                v.extend(rpn_propose(&out, &self.anchors, p, cfg.rpn_nms, cfg.train_top_k).into_iter().map(|q| q.bbox));
                let m = match_boxes(&v, &ex.boxes, FG_IOU);
                let n_fg = m.iter().filter(|l| l.is_some()).count();
                let mut bg_left = ROI_NEG_RATIO * n_fg.max(1);
                v.into_iter()
                    .zip(m)
                    .filter(|(_, l)| {
                        l.is_some() || {
                            let keep = bg_left > 0;
                            bg_left = bg_left.saturating_sub(1);
                            keep
                        }
                    })
                    .unzip()
            }
        };
        let strides = net.strides();
        let mut grads = zeros_like(net);
        let mut g_maps: Vec<Tensor> = f.maps.iter().map(|m| Tensor::zeros(m.shape())).collect();
        let nr = rois.len().max(1) as f64;
        let spb = cfg.samples_per_bin;

        let (mut l_roi_cls, mut l_roi_loc) = (0.0, 0.0);
        let mut fg: Vec<BBox> = Vec::new();
        for (roi, matched) in rois.iter().zip(&labels) {
            let gt = matched.map(|j| ex.boxes[j]);
            let k = roi_level(roi);
            let scaled = roi.scale(1.0 / strides[k], 1.0 / strides[k]);
            let feat = roi_align(&f.maps[k], &scaled, (ROI_POOL, ROI_POOL), spb)?;
            let (logits, off, cache) = net.roi_head.forward(feat.data())?;
            let label = usize::from(gt.is_some());
            l_roi_cls -= log_softmax(&logits)[label] / nr;
            let mut d_logits = softmax(&logits);
            d_logits[label] -= 1.0;
            d_logits.iter_mut().for_each(|d| *d /= nr);
            let mut d_off = [0.0; 4];
            if let Some(g) = gt {
                let t = encode_offsets(&g, roi)?;
                for j in 0..4 {
                    let d = off[j] - t[j];
                    l_roi_loc += smooth_l1(d) / nr;
                    d_off[j] = smooth_l1_grad(d) / nr;
                }
                fg.push(*roi);
            }
            let g_feat = net.roi_head.backward(&cache, &d_logits, &d_off, &mut grads.roi_head)?;
            roi_align_backward_into(&mut g_maps[k], &scaled, (ROI_POOL, ROI_POOL), spb, &Tensor::new(feat.shape(), g_feat)?)?;
        }

        fg.truncate(MAX_MASK_ROIS);
        let mut masks = Vec::with_capacity(fg.len());
        let mut caches = Vec::with_capacity(fg.len());
        for roi in &fg {
            let scaled = roi.scale(1.0 / strides[0], 1.0 / strides[0]);
            let feat = roi_align(&f.maps[0], &scaled, (MASK_POOL, MASK_POOL), spb)?;
            let c = feat.shape()[0];
            let (probs, cache) = net.mask_head.forward(&feat.reshape(&[1, c, MASK_POOL, MASK_POOL])?)?;
            masks.push((*roi, probs));
            caches.push((scaled, cache));
        }
        let (canvas, trace) = paste_masks(&masks, p);
        let pred = SegmentationMask::new(p, p, canvas)?;
        let l_pat = patch_loss(&pred, &ex.mask)?;
        let g_canvas = patch_loss_grad(&pred, &ex.mask)?;
        let g_masks = paste_masks_backward(&trace, masks.len(), &g_canvas);
        for ((scaled, cache), g) in caches.iter().zip(&g_masks) {
            let g_feat = net.mask_head.backward(cache, g, &mut grads.mask_head)?;
            let s = g_feat.shape().to_vec();
            let g3 = g_feat.reshape(&[s[1], s[2], s[3]])?;
            roi_align_backward_into(&mut g_maps[0], scaled, (MASK_POOL, MASK_POOL), spb, &g3)?;
        }

        let mut g_levels = net.rpn.backward(&f.pyramid, &rcache, &rl.d_logits, &rl.d_offsets, &mut grads.rpn)?;
        for (gl, gm) in g_levels.iter_mut().zip(g_maps) {
            let shape = gl.shape().to_vec();
            gl.add_assign(&gm.reshape(&shape)?)?;
        }
        let g_feats = build_pyramid_backward(&f.feats, &net.fpn, f.pyramid.bias_level.shape(), &g_levels, &mut grads.fpn)?;
        net.backbone.backward(&f.cache, &g_feats, &mut grads.backbone)?;
        let loss = combined_loss(rl.l_cls + l_roi_cls, rl.l_loc + l_roi_loc, l_pat)?;
        Ok((loss, grads))
    }
}
