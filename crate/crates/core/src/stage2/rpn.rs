use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pyramid::FeaturePyramid;
use super::heads::roi_level;
use crate::error::{Error, Result};
use crate::geometry::{decode_offsets, nms_indices, BBox, DefaultBoxSet, LevelSpec, Ratio};
use crate::loss::smooth_l1;
use crate::params::{visit_conv, visit_conv_mut, ParamSet};
use crate::stage1::{encode_targets, match_defaults, mine_hard_negatives};
use crate::loss::smooth_l1_grad;
use crate::tensor::{conv2d, conv2d_backward, relu, relu_backward, sigmoid, ConvKernel, Tensor};

/// A candidate region in the patch (network input) frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub objectness: f64,
    /// Pyramid level the region is pooled from.
    pub level: usize,
}

/// Region proposal head shared by every pyramid level: a 3x3 conv with
/// relu, then 1x1 objectness (one logit per anchor) and box (four offsets
/// per anchor) branches.
#[derive(Debug, Clone, PartialEq)]
pub struct RpnHead {
    pub conv: ConvKernel,
    pub cls: ConvKernel,
    pub bbox: ConvKernel,
}

/// Per-anchor RPN output in `(level, row, col, anchor)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct RpnOutput {
    pub logits: Vec<f64>,
    pub offsets: Vec<[f64; 4]>,
}

#[derive(Debug, Clone)]
pub struct RpnCache {
    z: Vec<Tensor>,
    h: Vec<Tensor>,
}

impl RpnHead {
    pub fn new<R: Rng + ?Sized>(channels: usize, anchors: usize, rng: &mut R) -> Self {
        Self {
            conv: ConvKernel::he(channels, channels, 3, 1, 1, rng),
            cls: ConvKernel::normal(anchors, channels, 1, 1, 0, 0.01, rng),
            bbox: ConvKernel::normal(4 * anchors, channels, 1, 1, 0, 0.01, rng),
        }
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.cls.out_channels()
    }

    pub fn forward(&self, pyramid: &FeaturePyramid) -> Result<(RpnOutput, RpnCache)> {
        let a = self.anchors_per_cell();
        let mut out = RpnOutput {
            logits: Vec::new(),
            offsets: Vec::new(),
        };
        let mut cache = RpnCache { z: vec![], h: vec![] };
        for level in &pyramid.levels {
            let z = conv2d(level, &self.conv)?;
            let h = relu(&z);
            let cls = conv2d(&h, &self.cls)?;
            let bx = conv2d(&h, &self.bbox)?;
            let (_, _, rows, cols) = h.dims4()?;
            let hw = rows * cols;
            for pos in 0..hw {
                for k in 0..a {
                    out.logits.push(cls.data()[k * hw + pos]);
                    let o = |j: usize| bx.data()[(4 * k + j) * hw + pos];
                    out.offsets.push([o(0), o(1), o(2), o(3)]);
                }
            }
            cache.z.push(z);
            cache.h.push(h);
        }
        Ok((out, cache))
    }

    /// Gradient on every pyramid level; parameter gradients accumulate
    /// into `grads`.
    pub fn backward(
        &self,
        pyramid: &FeaturePyramid,
        cache: &RpnCache,
        d_logits: &[f64],
        d_offsets: &[[f64; 4]],
        grads: &mut RpnHead,
    ) -> Result<Vec<Tensor>> {
        let a = self.anchors_per_cell();
        let mut base = 0;
        let mut g_levels = Vec::with_capacity(pyramid.levels.len());
        for (l, level) in pyramid.levels.iter().enumerate() {
            let h = &cache.h[l];
            let (_, _, rows, cols) = h.dims4()?;
            let hw = rows * cols;
            let mut gc = vec![0.0; a * hw];
            let mut gb = vec![0.0; 4 * a * hw];
            for pos in 0..hw {
                for k in 0..a {
                    let i = base + pos * a + k;
                    gc[k * hw + pos] = d_logits[i];
                    for j in 0..4 {
                        gb[(4 * k + j) * hw + pos] = d_offsets[i][j];
                    }
                }
            }
            base += a * hw;
            let c1 = conv2d_backward(h, &self.cls, &Tensor::new(&[1, a, rows, cols], gc)?)?;
            c1.accumulate_into(&mut grads.cls);
            let c2 = conv2d_backward(h, &self.bbox, &Tensor::new(&[1, 4 * a, rows, cols], gb)?)?;
            c2.accumulate_into(&mut grads.bbox);
            let mut g_h = c1.grad_input;
            g_h.add_assign(&c2.grad_input)?;
            let g_z = relu_backward(&cache.z[l], &g_h)?;
            let c0 = conv2d_backward(level, &self.conv, &g_z)?;
            c0.accumulate_into(&mut grads.conv);
            g_levels.push(c0.grad_input);
        }
        if base != d_logits.len() || base != d_offsets.len() {
            return Err(Error::invalid("rpn gradient length does not match the anchor count"));
        }
        Ok(g_levels)
    }
}

impl ParamSet for RpnHead {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        visit_conv("conv", &self.conv, f);
        visit_conv("cls", &self.cls, f);
        visit_conv("bbox", &self.bbox, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_conv_mut("conv", &mut self.conv, f);
        visit_conv_mut("cls", &mut self.cls, f);
        visit_conv_mut("bbox", &mut self.bbox, f);
    }
}

/// Anchors for a pyramid built from an `input_size` patch: level `k` has
/// side `anchor_size * 2^k`, one anchor per ratio per cell.
pub fn rpn_anchors(input_size: usize, level_sizes: &[(usize, usize)], anchor_size: f64, ratios: &[Ratio]) -> DefaultBoxSet {
    let levels: Vec<LevelSpec> = level_sizes
        .iter()
        .enumerate()
        .map(|(k, &(rows, cols))| LevelSpec {
            rows,
            cols,
            box_size: anchor_size * (1u64 << k) as f64,
        })
        .collect();
    DefaultBoxSet::generate((input_size, input_size), &levels, ratios)
}

/// Decode, clip and suppress RPN output into at most `top_k` proposals,
/// highest objectness first. Only the `4 * top_k` best anchors enter NMS;
/// boxes under one pixel on a side are dropped.
pub fn rpn_propose(
    out: &RpnOutput,
    anchors: &DefaultBoxSet,
    input_size: usize,
    nms_threshold: f64,
    top_k: usize,
) -> Vec<Proposal> {
    let s = input_size as f64;
    let mut order: Vec<usize> = (0..out.logits.len().min(anchors.len())).collect();
    order.sort_by(|&a, &b| out.logits[b].total_cmp(&out.logits[a]).then(a.cmp(&b)));
    order.truncate(4 * top_k);
    let mut boxes = Vec::with_capacity(order.len());
    let mut scores = Vec::with_capacity(order.len());
    for &i in &order {
        let b = decode_offsets(&out.offsets[i], &anchors.boxes[i]).clip(s, s);
        if b.width() >= 1.0 && b.height() >= 1.0 {
            boxes.push(b);
            scores.push(sigmoid(out.logits[i]));
        }
    }
    let mut keep = nms_indices(&boxes, &scores, nms_threshold);
    keep.truncate(top_k);
    keep.into_iter()
        .map(|k| Proposal {
            bbox: boxes[k],
            objectness: scores[k],
            level: roi_level(&boxes[k]),
        })
        .collect()
}

/// RPN objectness and box losses with their gradients. Anchors match the
/// ground truth at `threshold`; background anchors are mined by their loss
/// up to `neg_ratio * max(N, 1)`. Both terms are divided by `max(N, 1)`.
pub struct RpnLoss {
    pub l_cls: f64,
    pub l_loc: f64,
    pub d_logits: Vec<f64>,
    pub d_offsets: Vec<[f64; 4]>,
}

pub fn rpn_loss(
    out: &RpnOutput,
    anchors: &DefaultBoxSet,
    gts: &[BBox],
    threshold: f64,
    neg_ratio: f64,
) -> Result<RpnLoss> {
    let gt: Vec<(BBox, usize)> = gts.iter().map(|b| (*b, 1)).collect();
    let mut assign = match_defaults(&anchors.boxes, &gt, threshold);
    // Background loss of a sigmoid logit z is softplus(z) = -log softmax([0, z])[0].
    let pairs: Vec<Vec<f64>> = out.logits.iter().map(|&z| vec![0.0, z]).collect();
    mine_hard_negatives(&mut assign, &pairs, neg_ratio);
    let targets = encode_targets(&assign, &anchors.boxes, &gt)?;
    let norm = assign.n().max(1) as f64;
    let n = out.logits.len();
    let mut res = RpnLoss {
        l_cls: 0.0,
        l_loc: 0.0,
        d_logits: vec![0.0; n],
        d_offsets: vec![[0.0; 4]; n],
    };
    let softplus = |z: f64| z.max(0.0) + (-z.abs()).exp().ln_1p();
    for &i in &assign.pos {
        let z = out.logits[i];
        res.l_cls += softplus(-z) / norm;
        res.d_logits[i] = (sigmoid(z) - 1.0) / norm;
        for j in 0..4 {
            let d = out.offsets[i][j] - targets[i][j];
            res.l_loc += smooth_l1(d) / norm;
            res.d_offsets[i][j] = smooth_l1_grad(d) / norm;
        }
    }
    for &i in &assign.neg {
        let z = out.logits[i];
        res.l_cls += softplus(z) / norm;
        res.d_logits[i] = sigmoid(z) / norm;
    }
    Ok(res)
}
