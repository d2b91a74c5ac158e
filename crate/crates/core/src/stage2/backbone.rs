use rand::Rng;

use super::deform::{deformable_conv2d, deformable_conv2d_backward};
use crate::error::Result;
use crate::params::{visit_conv, visit_conv_mut, ParamSet};
use crate::tensor::{conv2d, conv2d_backward, relu, relu_backward, ConvKernel, Tensor};

/// Number of strided stages the backbone emits.
pub const STAGES: usize = 6;
/// Stages (after the stem) that carry a residual block.
const RESIDUAL: usize = 3;

/// Compact residual backbone with a deformable-kernel layer.
///
/// ```text
/// stem   conv3x3/2 -> relu                                  C1  (P/2)
/// down1  conv3x3/2 -> relu -> residual block                C2  (P/4)
/// down2  conv3x3/2 -> relu -> residual block                C3  (P/8)
/// down3  conv3x3/2 -> relu -> residual block                C4  (P/16)
/// down4  conv3x3/2 -> relu                                  C5  (P/32)
/// down5  conv3x3/2 -> relu                                  C6  (P/64)
/// dk     C1 + relu(deformable conv3x3(C1))                  -> pyramid
/// ```
///
/// A residual block is `relu(a + conv(relu(conv(a))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub stem: ConvKernel,
    pub down: Vec<ConvKernel>,
    pub res: Vec<[ConvKernel; 2]>,
    pub dk: ConvKernel,
    pub dk_offset: ConvKernel,
}

#[derive(Debug, Clone)]
pub struct BackboneCache {
    x: Tensor,
    z_stem: Tensor,
    c: Vec<Tensor>,
    zd: Vec<Tensor>,
    a: Vec<Tensor>,
    r1: Vec<Tensor>,
    h: Vec<Tensor>,
    s: Vec<Tensor>,
    zdk: Tensor,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let c = channels;
        let mut res: Vec<[ConvKernel; 2]> = Vec::with_capacity(RESIDUAL);
        for _ in 0..RESIDUAL {
            let first = ConvKernel::he(c, c, 3, 1, 1, rng);
            // Small second conv so each block starts close to identity.
            let second = ConvKernel::normal(c, c, 3, 1, 1, 0.1 * (2.0 / (9 * c) as f64).sqrt(), rng);
            res.push([first, second]);
        }
        Self {
            stem: ConvKernel::he(c, 1, 3, 2, 1, rng),
            down: (0..STAGES - 1).map(|_| ConvKernel::he(c, c, 3, 2, 1, rng)).collect(),
            res,
            dk: ConvKernel::normal(c, c, 3, 1, 1, 0.5 * (2.0 / (9 * c) as f64).sqrt(), rng),
            dk_offset: ConvKernel::zeros(18, c, 3, 1, 1),
        }
    }

    pub fn channels(&self) -> usize {
        self.stem.out_channels()
    }

    /// The six stage outputs fed to the pyramid, finest first (the finest
    /// one after the deformable layer).
    pub fn forward(&self, x: &Tensor) -> Result<(Vec<Tensor>, BackboneCache)> {
        let z_stem = conv2d(x, &self.stem)?;
        let mut c = vec![relu(&z_stem)];
        let (mut zd, mut a, mut r1, mut h, mut s) = (vec![], vec![], vec![], vec![], vec![]);
        for k in 0..STAGES - 1 {
            let z = conv2d(&c[k], &self.down[k])?;
            let act = relu(&z);
            let out = if k < RESIDUAL {
                let p = conv2d(&act, &self.res[k][0])?;
                let hh = relu(&p);
                let mut sum = conv2d(&hh, &self.res[k][1])?;
                sum.add_assign(&act)?;
                let o = relu(&sum);
                r1.push(p);
                h.push(hh);
                s.push(sum);
                o
            } else {
                act.clone()
            };
            zd.push(z);
            a.push(act);
            c.push(out);
        }
        let zdk = deformable_conv2d(&c[0], &self.dk, &self.dk_offset)?;
        let mut e0 = relu(&zdk);
        e0.add_assign(&c[0])?;
        let mut feats = vec![e0];
        feats.extend(c[1..].iter().cloned());
        let cache = BackboneCache {
            x: x.clone(),
            z_stem,
            c,
            zd,
            a,
            r1,
            h,
            s,
            zdk,
        };
        Ok((feats, cache))
    }

    /// Accumulate parameter gradients into `grads` given the gradient on
    /// every stage output (in [`Backbone::forward`] order).
    pub fn backward(&self, cache: &BackboneCache, g_feats: &[Tensor], grads: &mut Backbone) -> Result<()> {
        let mut g_c: Vec<Tensor> = g_feats.to_vec();
        let g_zdk = relu_backward(&cache.zdk, &g_feats[0])?;
        let dg = deformable_conv2d_backward(&cache.c[0], &self.dk, &self.dk_offset, &g_zdk)?;
        grads.dk.weight.add_assign(&dg.grad_kernel.weight)?;
        grads.dk.bias.add_assign(&dg.grad_kernel.bias)?;
        dg.grad_offset_net.accumulate_into(&mut grads.dk_offset);
        g_c[0].add_assign(&dg.grad_input)?;

        for k in (0..STAGES - 1).rev() {
            let g_out = &g_c[k + 1];
            let g_a = if k < RESIDUAL {
                let g_s = relu_backward(&cache.s[k], g_out)?;
                let cb2 = conv2d_backward(&cache.h[k], &self.res[k][1], &g_s)?;
                cb2.accumulate_into(&mut grads.res[k][1]);
                let g_r1 = relu_backward(&cache.r1[k], &cb2.grad_input)?;
                let cb1 = conv2d_backward(&cache.a[k], &self.res[k][0], &g_r1)?;
                cb1.accumulate_into(&mut grads.res[k][0]);
                let mut g_a = g_s;
                g_a.add_assign(&cb1.grad_input)?;
                g_a
            } else {
                g_out.clone()
            };
            let g_z = relu_backward(&cache.zd[k], &g_a)?;
            let cb = conv2d_backward(&cache.c[k], &self.down[k], &g_z)?;
            cb.accumulate_into(&mut grads.down[k]);
            g_c[k].add_assign(&cb.grad_input)?;
        }
        let g_stem = relu_backward(&cache.z_stem, &g_c[0])?;
        conv2d_backward(&cache.x, &self.stem, &g_stem)?.accumulate_into(&mut grads.stem);
        Ok(())
    }
}

impl ParamSet for Backbone {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        visit_conv("stem", &self.stem, f);
        for (k, d) in self.down.iter().enumerate() {
            visit_conv(&format!("down{k}"), d, f);
        }
        for (k, r) in self.res.iter().enumerate() {
            visit_conv(&format!("res{k}.a"), &r[0], f);
            visit_conv(&format!("res{k}.b"), &r[1], f);
        }
        visit_conv("dk", &self.dk, f);
        visit_conv("dk_offset", &self.dk_offset, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_conv_mut("stem", &mut self.stem, f);
        for (k, d) in self.down.iter_mut().enumerate() {
            visit_conv_mut(&format!("down{k}"), d, f);
        }
        for (k, r) in self.res.iter_mut().enumerate() {
            visit_conv_mut(&format!("res{k}.a"), &mut r[0], f);
            visit_conv_mut(&format!("res{k}.b"), &mut r[1], f);
        }
        visit_conv_mut("dk", &mut self.dk, f);
        visit_conv_mut("dk_offset", &mut self.dk_offset, f);
    }
}
