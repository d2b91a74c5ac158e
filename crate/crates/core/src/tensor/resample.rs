use super::Tensor;
use crate::error::{Error, Result};

/// Resampling filter for [`resize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Filter {
    /// Half-pixel-centred bilinear interpolation.
    Bilinear,
    /// Box-filter average over each output pixel's footprint when shrinking;
    /// bilinear when enlarging.
    Area,
}

/// Per-output-index list of `(input index, weight)`; weights sum to 1.
fn axis_weights(n_in: usize, n_out: usize, filter: Filter) -> Vec<Vec<(usize, f64)>> {
    let s = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            if filter == Filter::Area && s > 1.0 {
                let (lo, hi) = (o as f64 * s, (o + 1) as f64 * s);
                let mut taps = Vec::new();
                let mut i = lo.floor() as usize;
                while (i as f64) < hi && i < n_in {
                    let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                    if overlap > 0.0 {
                        taps.push((i, overlap / s));
                    }
                    i += 1;
                }
                taps
            } else {
                let src = ((o as f64 + 0.5) * s - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                let f = src - i0 as f64;
                if f == 0.0 || i0 == i1 {
                    vec![(i0, 1.0)]
                } else {
                    vec![(i0, 1.0 - f), (i1, f)]
                }
            }
        })
        .collect()
}

/// Resample one row-major `h x w` plane to `oh x ow`.
pub fn resample_plane(plane: &[f64], h: usize, w: usize, oh: usize, ow: usize, filter: Filter) -> Vec<f64> {
    debug_assert_eq!(plane.len(), h * w);
    let wx = axis_weights(w, ow, filter);
    let wy = axis_weights(h, oh, filter);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for (ox, taps) in wx.iter().enumerate() {
            rows[y * ow + ox] = taps.iter().map(|&(i, k)| k * src[i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for (oy, taps) in wy.iter().enumerate() {
        let dst = &mut out[oy * ow..(oy + 1) * ow];
        for &(i, k) in taps {
            for (d, s) in dst.iter_mut().zip(&rows[i * ow..(i + 1) * ow]) {
                *d += k * s;
            }
        }
    }
    out
}

/// Resize every plane of an `[N, C, H, W]` tensor.
pub fn resize(x: &Tensor, oh: usize, ow: usize, filter: Filter) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h == 0 || w == 0 || oh == 0 || ow == 0 {
        return Err(Error::invalid(format!("cannot resize {h}x{w} to {oh}x{ow}")));
    }
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        out.extend(resample_plane(&x.data()[p * h * w..(p + 1) * h * w], h, w, oh, ow, filter));
    }
    Tensor::new(&[n, c, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_size_is_exact() {
        let p: Vec<f64> = (0..12).map(f64::from).collect();
        assert_eq!(resample_plane(&p, 3, 4, 3, 4, Filter::Bilinear), p);
        assert_eq!(resample_plane(&p, 3, 4, 3, 4, Filter::Area), p);
    }

    #[test]
    fn area_halving_averages_blocks() {
        let p = vec![1.0, 3.0, 5.0, 7.0, 1.0, 3.0, 5.0, 7.0];
        assert_eq!(resample_plane(&p, 2, 4, 1, 2, Filter::Area), vec![2.0, 6.0]);
    }

    #[test]
    fn constant_is_preserved() {
        let p = vec![0.3; 35];
        for f in [Filter::Bilinear, Filter::Area] {
            for v in resample_plane(&p, 5, 7, 11, 3, f) {
                assert!((v - 0.3).abs() < 1e-12);
            }
        }
    }
}
