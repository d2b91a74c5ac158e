use super::Tensor;
use crate::error::{Error, Result};

/// How coordinates outside the lattice are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    /// Clamp the coordinate onto `[0, H-1] x [0, W-1]`.
    Clamp,
    /// Treat everything outside the lattice as zero.
    Zero,
}

/// The four lattice neighbours of a sample point with their interpolation
/// weights and the weights' derivatives with respect to `y` and `x`.
#[derive(Debug, Clone, Copy)]
pub struct Taps {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    pub dwdy: [f64; 4],
    pub dwdx: [f64; 4],
    pub valid: [bool; 4],
}

impl Taps {
    #[inline]
    pub fn apply(&self, plane: &[f64]) -> f64 {
        let mut v = 0.0;
        for k in 0..4 {
            if self.valid[k] {
                v += self.w[k] * plane[self.idx[k]];
            }
        }
        v
    }

    /// Adds `g * w_k` into each neighbour of `grad_plane`.
    #[inline]
    pub fn scatter(&self, grad_plane: &mut [f64], g: f64) {
        for k in 0..4 {
            if self.valid[k] {
                grad_plane[self.idx[k]] += self.w[k] * g;
            }
        }
    }

    /// `(d value / dy, d value / dx)` on `plane`.
    #[inline]
    pub fn coord_grad(&self, plane: &[f64]) -> (f64, f64) {
        let (mut gy, mut gx) = (0.0, 0.0);
        for k in 0..4 {
            if self.valid[k] {
                gy += self.dwdy[k] * plane[self.idx[k]];
                gx += self.dwdx[k] * plane[self.idx[k]];
            }
        }
        (gy, gx)
    }
}

/// Interpolation taps for sampling an `h x w` plane at `(y, x)` in index
/// coordinates (integer values hit lattice points exactly).
pub fn bilinear_taps(h: usize, w: usize, y: f64, x: f64, border: Border) -> Taps {
    let (hi, wi) = (h as isize, w as isize);
    let (y0, y1, ly, ydiff, x0, x1, lx, xdiff, valid) = match border {
        Border::Clamp => {
            let yc = y.clamp(0.0, (h - 1) as f64);
            let xc = x.clamp(0.0, (w - 1) as f64);
            let y0 = (yc.floor() as isize).min(hi - 1);
            let x0 = (xc.floor() as isize).min(wi - 1);
            let y1 = (y0 + 1).min(hi - 1);
            let x1 = (x0 + 1).min(wi - 1);
            let ydiff = if y == yc { 1.0 } else { 0.0 };
            let xdiff = if x == xc { 1.0 } else { 0.0 };
            (y0, y1, yc - y0 as f64, ydiff, x0, x1, xc - x0 as f64, xdiff, [true; 4])
        }
        Border::Zero => {
            if y <= -1.0 || x <= -1.0 || y >= h as f64 || x >= w as f64 {
                return Taps {
                    idx: [0; 4],
                    w: [0.0; 4],
                    dwdy: [0.0; 4],
                    dwdx: [0.0; 4],
                    valid: [false; 4],
                };
            }
            let y0 = y.floor() as isize;
            let x0 = x.floor() as isize;
            let (y1, x1) = (y0 + 1, x0 + 1);
            let inside = |r: isize, c: isize| r >= 0 && r < hi && c >= 0 && c < wi;
            let valid = [inside(y0, x0), inside(y0, x1), inside(y1, x0), inside(y1, x1)];
            (y0, y1, y - y0 as f64, 1.0, x0, x1, x - x0 as f64, 1.0, valid)
        }
    };
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    let at = |r: isize, c: isize| -> usize {
        if r >= 0 && c >= 0 && r < hi && c < wi {
            r as usize * w + c as usize
        } else {
            0
        }
    };
    Taps {
        idx: [at(y0, x0), at(y0, x1), at(y1, x0), at(y1, x1)],
        w: [hy * hx, hy * lx, ly * hx, ly * lx],
        dwdy: [-hx * ydiff, -lx * ydiff, hx * ydiff, lx * ydiff],
        dwdx: [-hy * xdiff, hy * xdiff, -ly * xdiff, ly * xdiff],
        valid,
    }
}

/// Bilinear sample of every channel of a `[C, H, W]` map at `(y, x)`.
/// Out-of-range coordinates clamp to the border.
pub fn bilinear_sample(map: &Tensor, y: f64, x: f64) -> Vec<f64> {
    let (c, h, w) = map.dims3().expect("bilinear_sample expects a [C, H, W] map");
    let taps = bilinear_taps(h, w, y, x, Border::Clamp);
    (0..c).map(|ch| taps.apply(map.plane(ch))).collect()
}

/// Gradients of [`bilinear_sample`].
#[derive(Debug, Clone)]
pub struct SampleGrad {
    pub grad_map: Tensor,
    pub grad_y: f64,
    pub grad_x: f64,
}

pub fn bilinear_sample_backward(map: &Tensor, y: f64, x: f64, grad_out: &[f64]) -> Result<SampleGrad> {
    let (c, h, w) = map.dims3()?;
    if grad_out.len() != c {
        return Err(Error::shape("bilinear_sample_backward", map.shape(), &[grad_out.len()]));
    }
    let taps = bilinear_taps(h, w, y, x, Border::Clamp);
    let mut grad_map = Tensor::zeros(map.shape());
    let (mut gy, mut gx) = (0.0, 0.0);
    for (ch, &g) in grad_out.iter().enumerate() {
        taps.scatter(&mut grad_map.data_mut()[ch * h * w..(ch + 1) * h * w], g);
        let (dy, dx) = taps.coord_grad(map.plane(ch));
        gy += g * dy;
        gx += g * dx;
    }
    Ok(SampleGrad {
        grad_map,
        grad_y: gy,
        grad_x: gx,
    })
}
