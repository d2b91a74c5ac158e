//! Dense float64 arrays and the hand-differentiated operations both stages
//! are built from.
//!
//! Layout is row-major everywhere; image-like tensors are `[N, C, H, W]`
//! (or `[C, H, W]` for single feature maps). Every forward op has a matching
//! backward that takes the upstream gradient and returns input and parameter
//! gradients; there is no autodiff graph.

mod conv;
mod ops;
mod resample;
mod sample;

pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvKernel};
pub use ops::{
    linear, linear_backward, log_softmax, matmul, matmul_backward, max_pool2d,
    max_pool2d_backward, relu, relu_backward, sgd_step, sigmoid, softmax, upsample_nearest,
    upsample_nearest_backward, Linear, LinearGrads, PoolIndices,
};
pub use resample::{resample_plane, resize, Filter};
pub use sample::{
    bilinear_sample, bilinear_sample_backward, bilinear_taps, Border, SampleGrad, Taps,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense N-dimensional array of `f64` with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("Tensor::new", shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
            grad: None,
        }
    }

    /// Gaussian initialization with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        Self::from_fn(shape, |_| normal.sample(rng))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Shape as `(n, c, h, w)`; errors unless the tensor is 4-D.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape("dims4", &self.shape, &[0, 0, 0, 0])),
        }
    }

    /// Shape as `(c, h, w)`; errors unless the tensor is 3-D.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape("dims3", &self.shape, &[0, 0, 0])),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), self.data.len());
        }
        Ok(self)
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![0.0; self.data.len()]);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &Tensor) -> Result<()> {
        if g.shape != self.shape {
            return Err(Error::shape("accumulate_grad", &self.shape, &g.shape));
        }
        let buf = self.grad.get_or_insert_with(|| vec![0.0; g.data.len()]);
        for (b, v) in buf.iter_mut().zip(&g.data) {
            *b += v;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if other.shape != self.shape {
            return Err(Error::shape("add_assign", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Borrow channel `c` of a `[C, H, W]` tensor (or of batch item 0 of an
    /// `[1, C, H, W]` tensor) as a flat plane.
    pub fn plane(&self, c: usize) -> &[f64] {
        let (h, w) = self.spatial();
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub(crate) fn spatial(&self) -> (usize, usize) {
        let n = self.shape.len();
        (self.shape[n - 2], self.shape[n - 1])
    }
}
