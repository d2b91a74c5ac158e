use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Convolution parameters: `weight` is `[out, in, kh, kw]`, `bias` is `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvKernel {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let (o, _, kh, kw) = weight.dims4()?;
        if bias.shape() != [o] {
            return Err(Error::shape("ConvKernel::new", weight.shape(), bias.shape()));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::invalid("kernel extents must be >= 1"));
        }
        if stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn zeros(out: usize, inp: usize, k: usize, stride: usize, padding: usize) -> Self {
        Self::new(
            Tensor::zeros(&[out, inp, k, k]),
            Tensor::zeros(&[out]),
            stride,
            padding,
        )
        .expect("valid kernel shape")
    }

    /// Gaussian weights with the given std, zero bias.
    pub fn normal<R: Rng + ?Sized>(
        out: usize,
        inp: usize,
        k: usize,
        stride: usize,
        padding: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut kernel = Self::zeros(out, inp, k, stride, padding);
        kernel.weight = Tensor::randn(&[out, inp, k, k], std, rng);
        kernel
    }

    /// He-normal init for layers followed by a ReLU.
    pub fn he<R: Rng + ?Sized>(
        out: usize,
        inp: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (inp * k * k) as f64).sqrt();
        Self::normal(out, inp, k, stride, padding, std, rng)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel_size();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < kh || pw < kw {
            return Err(Error::shape("conv2d", &[h, w], &[kh, kw]));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    /// Same-shaped kernel with every parameter zeroed (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut k = self.clone();
        k.weight.fill(0.0);
        k.bias.fill(0.0);
        k
    }
}

/// Gradients of [`conv2d`] with respect to its input and parameters.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub grad_input: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Tensor,
}

impl ConvGrads {
    /// Adds the parameter gradients into a kernel-shaped accumulator.
    pub fn accumulate_into(&self, acc: &mut ConvKernel) {
        acc.weight
            .add_assign(&self.grad_weights)
            .expect("gradient shape matches kernel");
        acc.bias
            .add_assign(&self.grad_bias)
            .expect("gradient shape matches kernel");
    }
}

/// Range of output columns whose input column `ox*stride + k - pad` lies in `[0, w)`.
#[inline]
fn valid_range(out: usize, w: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    let shift = k as isize - pad as isize;
    let lo = if shift >= 0 {
        0
    } else {
        ((-shift) as usize).div_ceil(stride)
    };
    let last = w as isize - 1 - shift;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last as usize / stride + 1).min(out);
    (lo.min(hi), hi)
}

fn check_input(input: &Tensor, kernel: &ConvKernel) -> Result<(usize, usize, usize, usize)> {
    let dims = input.dims4()?;
    if dims.1 != kernel.in_channels() {
        return Err(Error::shape("conv2d", input.shape(), kernel.weight.shape()));
    }
    Ok(dims)
}

/// 2-D cross-correlation of an `[N, C, H, W]` input.
///
/// Each output starts at the bias and accumulates taps in `(c, ki, kj)`
/// order; taps that fall in the zero padding are skipped.
pub fn conv2d(input: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    let (n, c, h, w) = check_input(input, kernel)?;
    let (oh, ow) = kernel.output_size(h, w)?;
    let o = kernel.out_channels();
    let (kh, kw) = kernel.kernel_size();
    let (s, p) = (kernel.stride, kernel.padding);
    let x = input.data();
    let wt = kernel.weight.data();
    let mut out = vec![0.0; n * o * oh * ow];

    for b in 0..n {
        for oc in 0..o {
            let plane = &mut out[(b * o + oc) * oh * ow..(b * o + oc + 1) * oh * ow];
            plane.fill(kernel.bias.data()[oc]);
            for ic in 0..c {
                let xin = &x[(b * c + ic) * h * w..(b * c + ic + 1) * h * w];
                for ki in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(oh, h, ki, p, s);
                    for kj in 0..kw {
                        let wv = wt[((oc * c + ic) * kh + ki) * kw + kj];
                        let (ox_lo, ox_hi) = valid_range(ow, w, kj, p, s);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ki - p;
                            let row = &xin[iy * w..(iy + 1) * w];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let off = kj as isize - p as isize;
                                for ox in ox_lo..ox_hi {
                                    orow[ox] += wv * row[(ox as isize + off) as usize];
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    orow[ox] += wv * row[ox * s + kj - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, o, oh, ow], out)
}

/// Backward pass of [`conv2d`].
pub fn conv2d_backward(input: &Tensor, kernel: &ConvKernel, grad_out: &Tensor) -> Result<ConvGrads> {
    let (n, c, h, w) = check_input(input, kernel)?;
    let (oh, ow) = kernel.output_size(h, w)?;
    let o = kernel.out_channels();
    if grad_out.shape() != [n, o, oh, ow] {
        return Err(Error::shape("conv2d_backward", grad_out.shape(), &[n, o, oh, ow]));
    }
    let (kh, kw) = kernel.kernel_size();
    let (s, p) = (kernel.stride, kernel.padding);
    let x = input.data();
    let wt = kernel.weight.data();
    let g = grad_out.data();

    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; o];

    for b in 0..n {
        for oc in 0..o {
            let gplane = &g[(b * o + oc) * oh * ow..(b * o + oc + 1) * oh * ow];
            gb[oc] += gplane.iter().sum::<f64>();
            for ic in 0..c {
                let base = (b * c + ic) * h * w;
                for ki in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(oh, h, ki, p, s);
                    for kj in 0..kw {
                        let widx = ((oc * c + ic) * kh + ki) * kw + kj;
                        let wv = wt[widx];
                        let (ox_lo, ox_hi) = valid_range(ow, w, kj, p, s);
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ki - p;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            let rbase = base + iy * w;
                            for ox in ox_lo..ox_hi {
                                let ix = rbase + ox * s + kj - p;
                                acc += grow[ox] * x[ix];
                                gx[ix] += wv * grow[ox];
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        grad_input: Tensor::new(input.shape(), gx)?,
        grad_weights: Tensor::new(kernel.weight.shape(), gw)?,
        grad_bias: Tensor::new(&[o], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let k = ConvKernel::new(Tensor::full(&[1, 1, 3, 3], 1.0), Tensor::zeros(&[1]), 1, 0).unwrap();
        let y = conv2d(&x, &k).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::from_fn(&[1, 1, 4, 5], |i| i as f64 * 0.37 - 1.0);
        let k = ConvKernel::new(Tensor::full(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(conv2d(&x, &k).unwrap().data(), x.data());
    }

    #[test]
    fn output_size_follows_floor_formula() {
        let k = ConvKernel::zeros(2, 1, 3, 2, 1);
        assert_eq!(k.output_size(7, 8).unwrap(), (4, 4));
        let k = ConvKernel::zeros(2, 1, 5, 1, 0);
        assert!(k.output_size(4, 9).is_err());
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::zeros(&[1, 3, 5, 5]);
        let k = ConvKernel::zeros(2, 2, 3, 1, 1);
        let err = conv2d(&x, &k).unwrap_err().to_string();
        assert!(err.contains("[1, 3, 5, 5]") && err.contains("[2, 2, 3, 3]"), "{err}");
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let x = Tensor::from_fn(&[1, 2, 5, 5], |i| (i as f64).sin());
        let k = ConvKernel::new(Tensor::full(&[3, 2, 3, 3], 0.5), Tensor::zeros(&[3]), 2, 1).unwrap();
        let y = conv2d(&x, &k).unwrap();
        let g = conv2d_backward(&x, &k, &Tensor::zeros(y.shape())).unwrap();
        assert!(g.grad_input.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_weights.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_grad_is_channel_sum() {
        let x = Tensor::from_fn(&[2, 1, 4, 4], |i| (i as f64).cos());
        let k = ConvKernel::zeros(2, 1, 3, 1, 1);
        let go = Tensor::from_fn(&[2, 2, 4, 4], |i| i as f64 * 0.1);
        let g = conv2d_backward(&x, &k, &go).unwrap();
        for oc in 0..2 {
            let mut s = 0.0;
            for b in 0..2 {
                s += go.data()[(b * 2 + oc) * 16..(b * 2 + oc + 1) * 16].iter().sum::<f64>();
            }
            assert!((g.grad_bias.data()[oc] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_wrong_grad_shape() {
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        let k = ConvKernel::zeros(1, 1, 3, 1, 0);
        assert!(conv2d_backward(&x, &k, &Tensor::zeros(&[1, 1, 4, 4])).is_err());
    }
}
