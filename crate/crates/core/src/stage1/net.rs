use rand::Rng;

use super::Stage1Config;
use crate::error::{Error, Result};
use crate::geometry::{DefaultBoxSet, LevelSpec, Ratio};
use crate::params::{visit_conv, visit_conv_mut, ParamSet};
use crate::tensor::{
    conv2d, conv2d_backward, max_pool2d, max_pool2d_backward, relu, relu_backward, ConvKernel,
    PoolIndices, Tensor,
};

/// Number of conv + pool blocks; the last three feed detection heads.
const BLOCKS: usize = 4;
pub const LEVELS: usize = 3;

/// Compact SSD: four `conv3x3 -> relu -> maxpool2` blocks, with a 3x3
/// class/offset head on the outputs of blocks 2, 3 and 4 (strides 4, 8, 16).
///
/// Head channel layout per cell: `anchors * (classes + 1)` logits (anchor
/// major) followed by `anchors * 4` offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdNet {
    pub input_size: usize,
    pub num_classes: usize,
    pub anchors: usize,
    pub blocks: Vec<ConvKernel>,
    pub heads: Vec<ConvKernel>,
}

/// Per-default-box predictions in `(level, row, col, anchor)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdOutput {
    pub logits: Vec<Vec<f64>>,
    pub offsets: Vec<[f64; 4]>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SsdCache {
    xs: Vec<Tensor>,
    zs: Vec<Tensor>,
    pools: Vec<PoolIndices>,
}

impl SsdNet {
    pub fn new<R: Rng + ?Sized>(cfg: &Stage1Config, anchors: usize, rng: &mut R) -> Result<Self> {
        let s = cfg.input_size;
        if s < 16 || s % 16 != 0 {
            return Err(Error::invalid(format!("stage-1 input size {s} must be a positive multiple of 16")));
        }
        let (c1, c2) = (cfg.channels1, cfg.channels2);
        let ins = [1, c1, c2, c2];
        let outs = [c1, c2, c2, c2];
        let blocks = (0..BLOCKS).map(|b| ConvKernel::he(outs[b], ins[b], 3, 1, 1, rng)).collect();
        let head_out = anchors * (cfg.num_classes + 1 + 4);
        let heads = (0..LEVELS)
            .map(|_| ConvKernel::normal(head_out, c2, 3, 1, 1, 0.01, rng))
            .collect();
        Ok(Self {
            input_size: s,
            num_classes: cfg.num_classes,
            anchors,
            blocks,
            heads,
        })
    }

    /// Feature-map side of detection level `l`.
    pub fn level_size(&self, l: usize) -> usize {
        self.input_size >> (l + 2)
    }

    /// Default boxes for this network's three levels; `box_scales` are box
    /// sides relative to the input size.
    pub fn default_boxes(&self, box_scales: &[f64], ratios: &[Ratio]) -> DefaultBoxSet {
        let levels: Vec<LevelSpec> = (0..LEVELS)
            .map(|l| LevelSpec {
                rows: self.level_size(l),
                cols: self.level_size(l),
                box_size: box_scales[l] * self.input_size as f64,
            })
            .collect();
        DefaultBoxSet::generate((self.input_size, self.input_size), &levels, ratios)
    }

    pub fn forward(&self, input: &Tensor) -> Result<(SsdOutput, SsdCache)> {
        let s = self.input_size;
        if input.shape() != [1, 1, s, s] {
            return Err(Error::shape("SsdNet::forward", input.shape(), &[1, 1, s, s]));
        }
        let mut xs = vec![input.clone()];
        let mut zs = Vec::with_capacity(BLOCKS);
        let mut pools = Vec::with_capacity(BLOCKS);
        for b in 0..BLOCKS {
            let z = conv2d(&xs[b], &self.blocks[b])?;
            let (p, idx) = max_pool2d(&relu(&z), 2, 2)?;
            zs.push(z);
            pools.push(idx);
            xs.push(p);
        }
        let k1 = self.num_classes + 1;
        let a = self.anchors;
        let mut logits = Vec::new();
        let mut offsets = Vec::new();
        for l in 0..LEVELS {
            let out = conv2d(&xs[l + 2], &self.heads[l])?;
            let (_, _, rows, cols) = out.dims4()?;
            let hw = rows * cols;
            let d = out.data();
            for cell in 0..hw {
                for ai in 0..a {
                    logits.push((0..k1).map(|k| d[(ai * k1 + k) * hw + cell]).collect());
                    let base = a * k1 + ai * 4;
                    offsets.push(std::array::from_fn(|m| d[(base + m) * hw + cell]));
                }
            }
        }
        Ok((SsdOutput { logits, offsets }, SsdCache { xs, zs, pools }))
    }

    /// Parameter gradients given the loss gradient on every prediction.
    pub fn backward(&self, cache: &SsdCache, d_logits: &[Vec<f64>], d_offsets: &[[f64; 4]]) -> Result<SsdNet> {
        let mut grads = crate::params::zeros_like(self);
        let k1 = self.num_classes + 1;
        let a = self.anchors;
        let mut g_x: Vec<Option<Tensor>> = vec![None; BLOCKS + 1];
        let mut box_idx = 0;
        for l in 0..LEVELS {
            let n = self.level_size(l);
            let hw = n * n;
            let ch = a * (k1 + 4);
            let mut g = vec![0.0; ch * hw];
            for cell in 0..hw {
                for ai in 0..a {
                    for k in 0..k1 {
                        g[(ai * k1 + k) * hw + cell] = d_logits[box_idx][k];
                    }
                    for m in 0..4 {
                        g[(a * k1 + ai * 4 + m) * hw + cell] = d_offsets[box_idx][m];
                    }
                    box_idx += 1;
                }
            }
            let gt = Tensor::new(&[1, ch, n, n], g)?;
            let cg = conv2d_backward(&cache.xs[l + 2], &self.heads[l], &gt)?;
            cg.accumulate_into(&mut grads.heads[l]);
            g_x[l + 2] = Some(cg.grad_input);
        }
        if box_idx != d_logits.len() || d_logits.len() != d_offsets.len() {
            return Err(Error::shape("SsdNet::backward", &[box_idx], &[d_logits.len(), d_offsets.len()]));
        }
        for b in (0..BLOCKS).rev() {
            let g_out = g_x[b + 1].take().expect("gradient reaches every block output");
            let g_act = max_pool2d_backward(&cache.pools[b], &g_out)?;
            let g_z = relu_backward(&cache.zs[b], &g_act)?;
            let cg = conv2d_backward(&cache.xs[b], &self.blocks[b], &g_z)?;
            cg.accumulate_into(&mut grads.blocks[b]);
            if b > 0 {
                let mut gi = cg.grad_input;
                if let Some(prev) = g_x[b].take() {
                    gi.add_assign(&prev)?;
                }
                g_x[b] = Some(gi);
            }
        }
        Ok(grads)
    }

    /// `[input_size, channels1, channels2, num_classes, anchors]`.
    pub fn arch(&self) -> Tensor {
        let v = [
            self.input_size,
            self.blocks[0].out_channels(),
            self.blocks[1].out_channels(),
            self.num_classes,
            self.anchors,
        ];
        Tensor::new(&[5], v.iter().map(|&x| x as f64).collect()).expect("5 values")
    }

    /// Zero-initialised network with the architecture recorded by [`arch`].
    ///
    /// [`arch`]: SsdNet::arch
    pub fn from_arch(arch: &Tensor) -> Result<Self> {
        let v: Vec<usize> = arch.data().iter().map(|&x| x as usize).collect();
        if v.len() != 5 {
            return Err(Error::Checkpoint("stage-1 architecture entry must hold 5 values".into()));
        }
        let cfg = Stage1Config {
            input_size: v[0],
            channels1: v[1],
            channels2: v[2],
            num_classes: v[3],
            ..Stage1Config::default()
        };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Self::new(&cfg, v[4], &mut rng)?;
        net.visit_mut(&mut |_, t| t.fill(0.0));
        Ok(net)
    }
}

impl ParamSet for SsdNet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (b, k) in self.blocks.iter().enumerate() {
            visit_conv(&format!("conv{b}"), k, f);
        }
        for (l, k) in self.heads.iter().enumerate() {
            visit_conv(&format!("head{l}"), k, f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (b, k) in self.blocks.iter_mut().enumerate() {
            visit_conv_mut(&format!("conv{b}"), k, f);
        }
        for (l, k) in self.heads.iter_mut().enumerate() {
            visit_conv_mut(&format!("head{l}"), k, f);
        }
    }
}
