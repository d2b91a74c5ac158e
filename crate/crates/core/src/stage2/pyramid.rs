use rand::Rng;

use super::backbone::STAGES;
use crate::error::{Error, Result};
use crate::params::{visit_conv, visit_conv_mut, ParamSet};
use crate::tensor::{conv2d, conv2d_backward, upsample_nearest, upsample_nearest_backward, ConvKernel, Tensor};

/// Six feature levels (finest first) that all include the bias level.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
    /// The extra coarsest level, before it is upsampled into every level.
    pub bias_level: Tensor,
}

/// Pyramid parameters: one 1x1 lateral per stage and the stride-2 3x3 conv
/// that produces the bias level from the coarsest stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Fpn {
    pub lateral: Vec<ConvKernel>,
    pub bias_conv: ConvKernel,
}

impl Fpn {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, channels: usize, rng: &mut R) -> Self {
        let std = (1.0 / in_channels as f64).sqrt();
        Self {
            lateral: (0..STAGES)
                .map(|_| ConvKernel::normal(channels, in_channels, 1, 1, 0, std, rng))
                .collect(),
            bias_conv: ConvKernel::normal(channels, in_channels, 3, 2, 1, (1.0 / (9 * in_channels) as f64).sqrt(), rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.bias_conv.out_channels()
    }
}

fn spatial(t: &Tensor) -> (usize, usize) {
    let s = t.shape();
    (s[2], s[3])
}

/// Top-down pyramid with lateral 1x1 projections and nearest upsampling;
/// the bias level (stride-2 conv of the coarsest stage) is upsampled and
/// added to every level.
pub fn build_pyramid(features: &[Tensor], fpn: &Fpn) -> Result<FeaturePyramid> {
    if features.len() != STAGES {
        return Err(Error::invalid(format!(
            "pyramid needs {STAGES} backbone stages, got {}",
            features.len()
        )));
    }
    for k in 1..STAGES {
        let (h, w) = spatial(&features[k - 1]);
        if spatial(&features[k]) != (h.div_ceil(2), w.div_ceil(2)) {
            return Err(Error::shape("build_pyramid", features[k - 1].shape(), features[k].shape()));
        }
    }
    let lat: Vec<Tensor> = features
        .iter()
        .zip(&fpn.lateral)
        .map(|(f, l)| conv2d(f, l))
        .collect::<Result<_>>()?;
    let mut p = lat;
    for k in (0..STAGES - 1).rev() {
        let (h, w) = spatial(&p[k]);
        let up = upsample_nearest(&p[k + 1], h, w)?;
        p[k].add_assign(&up)?;
    }
    let bias_level = conv2d(&features[STAGES - 1], &fpn.bias_conv)?;
    for level in &mut p {
        let (h, w) = spatial(level);
        level.add_assign(&upsample_nearest(&bias_level, h, w)?)?;
    }
    Ok(FeaturePyramid { levels: p, bias_level })
}

/// Gradients of [`build_pyramid`]: returns the gradient on each backbone
/// stage and accumulates parameter gradients into `grads`.
pub fn build_pyramid_backward(
    features: &[Tensor],
    fpn: &Fpn,
    bias_shape: &[usize],
    g_levels: &[Tensor],
    grads: &mut Fpn,
) -> Result<Vec<Tensor>> {
    if g_levels.len() != STAGES || features.len() != STAGES {
        return Err(Error::invalid("pyramid backward needs one gradient per level"));
    }
    let mut g_bias = Tensor::zeros(bias_shape);
    for g in g_levels {
        g_bias.add_assign(&upsample_nearest_backward(bias_shape, g)?)?;
    }
    let mut g_p: Vec<Tensor> = g_levels.to_vec();
    for k in 0..STAGES - 1 {
        let coarse_shape = g_p[k + 1].shape().to_vec();
        let back = upsample_nearest_backward(&coarse_shape, &g_p[k])?;
        g_p[k + 1].add_assign(&back)?;
    }
    let mut g_feats = Vec::with_capacity(STAGES);
    for k in 0..STAGES {
        let cb = conv2d_backward(&features[k], &fpn.lateral[k], &g_p[k])?;
        cb.accumulate_into(&mut grads.lateral[k]);
        g_feats.push(cb.grad_input);
    }
    let cb = conv2d_backward(&features[STAGES - 1], &fpn.bias_conv, &g_bias)?;
    cb.accumulate_into(&mut grads.bias_conv);
    g_feats[STAGES - 1].add_assign(&cb.grad_input)?;
    Ok(g_feats)
}

impl ParamSet for Fpn {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (k, l) in self.lateral.iter().enumerate() {
            visit_conv(&format!("lateral{k}"), l, f);
        }
        visit_conv("bias_conv", &self.bias_conv, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (k, l) in self.lateral.iter_mut().enumerate() {
            visit_conv_mut(&format!("lateral{k}"), l, f);
        }
        visit_conv_mut("bias_conv", &mut self.bias_conv, f);
    }
}
