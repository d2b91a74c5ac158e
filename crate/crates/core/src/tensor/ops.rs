use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of [`relu`] given the forward input `x`.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(Error::shape("relu_backward", x.shape(), grad_out.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| v - lse).collect()
}

/// Argmax bookkeeping from [`max_pool2d`], one flat input index per output.
#[derive(Debug, Clone)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

/// Max pooling over `[N, C, H, W]` with a square window, no padding.
pub fn max_pool2d(x: &Tensor, size: usize, stride: usize) -> Result<(Tensor, PoolIndices)> {
    let (n, c, h, w) = x.dims4()?;
    if size == 0 || stride == 0 || h < size || w < size {
        return Err(Error::shape("max_pool2d", x.shape(), &[size, size]));
    }
    let (oh, ow) = ((h - size) / stride + 1, (w - size) / stride + 1);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let d = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..size {
                    for kx in 0..size {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                }
                out.push(d[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(&[n, c, oh, ow], out)?,
        PoolIndices {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn max_pool2d_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::shape(
            "max_pool2d_backward",
            grad_out.shape(),
            &[indices.argmax.len()],
        ));
    }
    let mut gx = Tensor::zeros(&indices.input_shape);
    let buf = gx.data_mut();
    for (&i, &g) in indices.argmax.iter().zip(grad_out.data()) {
        buf[i] += g;
    }
    Ok(gx)
}

/// Nearest-neighbour resize of the two trailing axes to `out_h x out_w`.
/// Source row for output row `y` is `floor(y * h / out_h)`.
pub fn upsample_nearest(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if x.ndim() < 2 {
        return Err(Error::shape("upsample_nearest", x.shape(), &[out_h, out_w]));
    }
    let (h, w) = x.spatial();
    let planes = x.len() / (h * w);
    let mut shape = x.shape().to_vec();
    let nd = shape.len();
    shape[nd - 2] = out_h;
    shape[nd - 1] = out_w;
    let mut out = Vec::with_capacity(planes * out_h * out_w);
    let d = x.data();
    for p in 0..planes {
        for y in 0..out_h {
            let sy = y * h / out_h;
            for xo in 0..out_w {
                out.push(d[p * h * w + sy * w + xo * w / out_w]);
            }
        }
    }
    Tensor::new(&shape, out)
}

/// Gradient of [`upsample_nearest`] back onto a tensor of `input_shape`.
pub fn upsample_nearest_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let mut gx = Tensor::zeros(input_shape);
    let (h, w) = gx.spatial();
    let (out_h, out_w) = grad_out.spatial();
    let planes = gx.len() / (h * w);
    if grad_out.len() != planes * out_h * out_w {
        return Err(Error::shape("upsample_nearest_backward", input_shape, grad_out.shape()));
    }
    let g = grad_out.data();
    let buf = gx.data_mut();
    for p in 0..planes {
        for y in 0..out_h {
            let sy = y * h / out_h;
            for xo in 0..out_w {
                buf[p * h * w + sy * w + xo * w / out_w] += g[(p * out_h + y) * out_w + xo];
            }
        }
    }
    Ok(gx)
}

/// `[m, k] x [k, n] -> [m, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = match (a.shape(), b.shape()) {
        ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
        _ => return Err(Error::shape("matmul", a.shape(), b.shape())),
    };
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// Returns `(grad_a, grad_b)` for `c = a b`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, k, n) = match (a.shape(), b.shape()) {
        ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
        _ => return Err(Error::shape("matmul_backward", a.shape(), b.shape())),
    };
    if grad_out.shape() != [m, n] {
        return Err(Error::shape("matmul_backward", grad_out.shape(), &[m, n]));
    }
    let (ad, bd, g) = (a.data(), b.data(), grad_out.data());
    let mut ga = vec![0.0; m * k];
    let mut gb = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let mut acc = 0.0;
            for j in 0..n {
                acc += g[i * n + j] * bd[p * n + j];
                gb[p * n + j] += ad[i * k + p] * g[i * n + j];
            }
            ga[i * k + p] = acc;
        }
    }
    Ok((Tensor::new(&[m, k], ga)?, Tensor::new(&[k, n], gb)?))
}

/// Fully connected layer: `weight` is `[out, in]`, `bias` is `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out, inp]),
            bias: Tensor::zeros(&[out]),
        }
    }

    pub fn normal<R: Rng + ?Sized>(out: usize, inp: usize, std: f64, rng: &mut R) -> Self {
        Self {
            weight: Tensor::randn(&[out, inp], std, rng),
            bias: Tensor::zeros(&[out]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.out_features(), self.in_features())
    }
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub grad_input: Vec<f64>,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
}

impl LinearGrads {
    pub fn accumulate_into(&self, acc: &mut Linear) {
        acc.weight.add_assign(&self.grad_weight).expect("same shape");
        acc.bias.add_assign(&self.grad_bias).expect("same shape");
    }
}

/// `y = W x + b` for a single input vector.
pub fn linear(x: &[f64], layer: &Linear) -> Result<Vec<f64>> {
    let (o, i) = (layer.out_features(), layer.in_features());
    if x.len() != i {
        return Err(Error::shape("linear", &[x.len()], layer.weight.shape()));
    }
    let w = layer.weight.data();
    Ok((0..o)
        .map(|r| {
            let row = &w[r * i..(r + 1) * i];
            layer.bias.data()[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect())
}

pub fn linear_backward(x: &[f64], layer: &Linear, grad_out: &[f64]) -> Result<LinearGrads> {
    let (o, i) = (layer.out_features(), layer.in_features());
    if x.len() != i || grad_out.len() != o {
        return Err(Error::shape("linear_backward", &[x.len(), grad_out.len()], &[i, o]));
    }
    let w = layer.weight.data();
    let mut gx = vec![0.0; i];
    let mut gw = vec![0.0; o * i];
    for r in 0..o {
        let g = grad_out[r];
        if g == 0.0 {
            continue;
        }
        for c in 0..i {
            gx[c] += w[r * i + c] * g;
            gw[r * i + c] = g * x[c];
        }
    }
    Ok(LinearGrads {
        grad_input: gx,
        grad_weight: Tensor::new(&[o, i], gw)?,
        grad_bias: Tensor::new(&[o], grad_out.to_vec())?,
    })
}

/// Plain fixed-rate SGD: `p -= lr * g`.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::invalid(format!(
            "sgd_step: {} params but {} grads",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("sgd_step", p.shape(), g.shape()));
        }
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetric_and_shift_invariant() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        for x in [-50.0, 0.0, 3.5, 700.0] {
            for p in softmax(&[x, x, x]) {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-300 + 1e-12);
        let lp = log_softmax(&[1000.0, 0.0]);
        assert!((lp[1] + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn pool_picks_window_max_and_routes_grad() {
        let x = Tensor::new(&[1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 6.0]).unwrap();
        let (y, idx) = max_pool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
        let gx = max_pool2d_backward(&idx, &Tensor::new(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(gx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn upsample_broadcasts_single_cell() {
        let x = Tensor::new(&[2, 1, 1], vec![3.0, -1.0]).unwrap();
        let y = upsample_nearest(&x, 3, 2).unwrap();
        assert_eq!(y.data(), &[3.0; 6].iter().chain(&[-1.0; 6]).copied().collect::<Vec<_>>()[..]);
        let g = upsample_nearest_backward(&[2, 1, 1], &Tensor::full(&[2, 3, 2], 1.0)).unwrap();
        assert_eq!(g.data(), &[6.0, 6.0]);
    }

    #[test]
    fn matmul_small_case() {
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);
        assert!(matmul(&b, &b).is_err());
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut p = Tensor::new(&[2], vec![1.0, 1.0]).unwrap();
        let g = Tensor::new(&[2], vec![0.5, -2.0]).unwrap();
        sgd_step(&mut [&mut p], &[&g], 0.1).unwrap();
        assert_eq!(p.data(), &[0.95, 1.2]);
    }

    #[test]
    fn relu_backward_masks_negative_inputs() {
        let x = Tensor::new(&[3], vec![-1.0, 0.5, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.5, 2.0]);
        let g = relu_backward(&x, &Tensor::full(&[3], 2.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 2.0, 2.0]);
    }
}
