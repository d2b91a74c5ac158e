//! Deformable convolution: every kernel tap samples the input at its
//! regular position plus a learned `(Δy, Δx)`, with zero outside the map.

use crate::error::{Error, Result};
use crate::tensor::{bilinear_taps, conv2d, conv2d_backward, Border, ConvGrads, ConvKernel, Taps, Tensor};

/// Gradients of [`deformable_conv2d`].
#[derive(Debug, Clone)]
pub struct DeformGrads {
    pub grad_input: Tensor,
    /// Gradient for the main kernel (weights and bias).
    pub grad_kernel: ConvKernel,
    pub grad_offset_net: ConvGrads,
    /// Gradient with respect to the predicted offsets `[N, 2*kh*kw, OH, OW]`.
    pub grad_offsets: Tensor,
}

struct Sampled {
    offsets: Tensor,
    /// `[N][C * kh * kw][OH * OW]` sampled values, flattened.
    cols: Vec<f64>,
    /// Taps per `(n, tap, position)`; shared by all channels.
    taps: Vec<Taps>,
    dims: (usize, usize, usize, usize, usize, usize),
}

fn sample(input: &Tensor, kernel: &ConvKernel, offset_net: &ConvKernel) -> Result<Sampled> {
    let (n, c, h, w) = input.dims4()?;
    if c != kernel.in_channels() {
        return Err(Error::shape("deformable_conv2d", input.shape(), kernel.weight.shape()));
    }
    let (kh, kw) = kernel.kernel_size();
    let (oh, ow) = kernel.output_size(h, w)?;
    let offsets = conv2d(input, offset_net)?;
    let (_, oc, ohh, oww) = offsets.dims4()?;
    if oc != 2 * kh * kw || (ohh, oww) != (oh, ow) {
        return Err(Error::shape(
            "deformable_conv2d offsets",
            offsets.shape(),
            &[n, 2 * kh * kw, oh, ow],
        ));
    }
    let (s, p) = (kernel.stride as f64, kernel.padding as f64);
    let t_count = kh * kw;
    let hw = oh * ow;
    let off = offsets.data();
    let mut taps = Vec::with_capacity(n * t_count * hw);
    for b in 0..n {
        for t in 0..t_count {
            let (ki, kj) = ((t / kw) as f64, (t % kw) as f64);
            let dy = &off[(b * 2 * t_count + 2 * t) * hw..][..hw];
            let dx = &off[(b * 2 * t_count + 2 * t + 1) * hw..][..hw];
            for pos in 0..hw {
                let (oy, ox) = ((pos / ow) as f64, (pos % ow) as f64);
                let y = oy * s - p + ki + dy[pos];
                let x = ox * s - p + kj + dx[pos];
                taps.push(bilinear_taps(h, w, y, x, Border::Zero));
            }
        }
    }
    let x = input.data();
    let mut cols = vec![0.0; n * c * t_count * hw];
    for b in 0..n {
        for ic in 0..c {
            let plane = &x[(b * c + ic) * h * w..][..h * w];
            for t in 0..t_count {
                let dst = &mut cols[((b * c + ic) * t_count + t) * hw..][..hw];
                let tp = &taps[(b * t_count + t) * hw..][..hw];
                for pos in 0..hw {
                    dst[pos] = tp[pos].apply(plane);
                }
            }
        }
    }
    Ok(Sampled {
        offsets,
        cols,
        taps,
        dims: (n, c, h, w, oh, ow),
    })
}

/// Deformable 2-D convolution of an `[N, C, H, W]` input.
///
/// `offset_net` is an ordinary convolution over the same input that must
/// produce `2 * kh * kw` channels at the main kernel's output resolution;
/// channel `2t` is `Δy` and `2t + 1` is `Δx` for tap `t = ki * kw + kj`.
/// Each output starts at the bias and accumulates taps in `(c, ki, kj)`
/// order, so zero offsets reproduce [`conv2d`] exactly.
pub fn deformable_conv2d(input: &Tensor, kernel: &ConvKernel, offset_net: &ConvKernel) -> Result<Tensor> {
    let sm = sample(input, kernel, offset_net)?;
    let (n, c, _, _, oh, ow) = sm.dims;
    let (kh, kw) = kernel.kernel_size();
    let t_count = kh * kw;
    let hw = oh * ow;
    let o = kernel.out_channels();
    let wt = kernel.weight.data();
    let mut out = vec![0.0; n * o * hw];
    for b in 0..n {
        for oc in 0..o {
            let dst = &mut out[(b * o + oc) * hw..][..hw];
            dst.fill(kernel.bias.data()[oc]);
            for ic in 0..c {
                for t in 0..t_count {
                    let wv = wt[(oc * c + ic) * t_count + t];
                    let col = &sm.cols[((b * c + ic) * t_count + t) * hw..][..hw];
                    for (d, v) in dst.iter_mut().zip(col) {
                        *d += wv * v;
                    }
                }
            }
        }
    }
    Tensor::new(&[n, o, oh, ow], out)
}

pub fn deformable_conv2d_backward(
    input: &Tensor,
    kernel: &ConvKernel,
    offset_net: &ConvKernel,
    grad_out: &Tensor,
) -> Result<DeformGrads> {
    let sm = sample(input, kernel, offset_net)?;
    let (n, c, h, w, oh, ow) = sm.dims;
    let o = kernel.out_channels();
    if grad_out.shape() != [n, o, oh, ow] {
        return Err(Error::shape("deformable_conv2d_backward", grad_out.shape(), &[n, o, oh, ow]));
    }
    let (kh, kw) = kernel.kernel_size();
    let t_count = kh * kw;
    let hw = oh * ow;
    let wt = kernel.weight.data();
    let g = grad_out.data();

    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; o];
    let mut gcols = vec![0.0; sm.cols.len()];
    for b in 0..n {
        for oc in 0..o {
            let gplane = &g[(b * o + oc) * hw..][..hw];
            gb[oc] += gplane.iter().sum::<f64>();
            for ic in 0..c {
                for t in 0..t_count {
                    let widx = (oc * c + ic) * t_count + t;
                    let base = ((b * c + ic) * t_count + t) * hw;
                    let col = &sm.cols[base..][..hw];
                    gw[widx] += gplane.iter().zip(col).map(|(a, v)| a * v).sum::<f64>();
                    let wv = wt[widx];
                    for (gc, gp) in gcols[base..][..hw].iter_mut().zip(gplane) {
                        *gc += wv * gp;
                    }
                }
            }
        }
    }

    let x = input.data();
    let mut gx = vec![0.0; x.len()];
    let mut goff = vec![0.0; sm.offsets.len()];
    for b in 0..n {
        for ic in 0..c {
            let pbase = (b * c + ic) * h * w;
            for t in 0..t_count {
                let base = ((b * c + ic) * t_count + t) * hw;
                let tp = &sm.taps[(b * t_count + t) * hw..][..hw];
                let oy_base = (b * 2 * t_count + 2 * t) * hw;
                let ox_base = oy_base + hw;
                for pos in 0..hw {
                    let gc = gcols[base + pos];
                    if gc == 0.0 {
                        continue;
                    }
                    tp[pos].scatter(&mut gx[pbase..pbase + h * w], gc);
                    let (dy, dx) = tp[pos].coord_grad(&x[pbase..pbase + h * w]);
                    goff[oy_base + pos] += gc * dy;
                    goff[ox_base + pos] += gc * dx;
                }
            }
        }
    }
    let grad_offsets = Tensor::new(sm.offsets.shape(), goff)?;
    let grad_offset_net = conv2d_backward(input, offset_net, &grad_offsets)?;
    let mut grad_input = Tensor::new(input.shape(), gx)?;
    grad_input.add_assign(&grad_offset_net.grad_input)?;
    Ok(DeformGrads {
        grad_input,
        grad_kernel: ConvKernel::new(
            Tensor::new(kernel.weight.shape(), gw)?,
            Tensor::new(&[o], gb)?,
            kernel.stride,
            kernel.padding,
        )?,
        grad_offset_net,
        grad_offsets,
    })
}
