use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::{bilinear_taps, Border, Tensor};

fn check(map: &Tensor, roi: &BBox, out: (usize, usize), samples: usize) -> Result<(usize, usize, usize)> {
    let dims = map.dims3()?;
    if !(roi.width() > 0.0 && roi.height() > 0.0) {
        return Err(Error::invalid(format!("roi {roi:?} has zero area")));
    }
    if out.0 == 0 || out.1 == 0 || samples == 0 {
        return Err(Error::invalid("roi_align needs a non-empty output and at least one sample per bin"));
    }
    Ok(dims)
}

/// Visit every sample point of every bin as `(bin index, y, x)` in
/// lattice-index coordinates (pixel `i` covers `[i, i + 1)`, so its centre
/// `i + 0.5` maps to index `i`).
fn for_each_sample(roi: &BBox, out: (usize, usize), samples: usize, mut f: impl FnMut(usize, f64, f64)) {
    let (oh, ow) = out;
    let bh = roi.height() / oh as f64;
    let bw = roi.width() / ow as f64;
    let s = samples as f64;
    for by in 0..oh {
        for bx in 0..ow {
            for sy in 0..samples {
                let y = roi.y_min + by as f64 * bh + (sy as f64 + 0.5) * bh / s - 0.5;
                for sx in 0..samples {
                    let x = roi.x_min + bx as f64 * bw + (sx as f64 + 0.5) * bw / s - 0.5;
                    f(by * ow + bx, y, x);
                }
            }
        }
    }
}

/// Average `samples²` bilinear samples per bin of an `out.0 x out.1` grid
/// laid over `roi` (continuous map coordinates). Coordinates are never
/// rounded; samples outside the map clamp to its border.
pub fn roi_align(map: &Tensor, roi: &BBox, out: (usize, usize), samples: usize) -> Result<Tensor> {
    let (c, h, w) = check(map, roi, out, samples)?;
    let bins = out.0 * out.1;
    let norm = 1.0 / (samples * samples) as f64;
    let mut data = vec![0.0; c * bins];
    for_each_sample(roi, out, samples, |bin, y, x| {
        let taps = bilinear_taps(h, w, y, x, Border::Clamp);
        for ch in 0..c {
            data[ch * bins + bin] += norm * taps.apply(map.plane(ch));
        }
    });
    Tensor::new(&[c, out.0, out.1], data)
}

/// Gradient of [`roi_align`] with respect to the map (the roi is treated
/// as a constant).
pub fn roi_align_backward(
    map_shape: &[usize],
    roi: &BBox,
    out: (usize, usize),
    samples: usize,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let mut grad = Tensor::zeros(map_shape);
    roi_align_backward_into(&mut grad, roi, out, samples, grad_out)?;
    Ok(grad)
}

/// Accumulating form of [`roi_align_backward`].
pub fn roi_align_backward_into(
    grad_map: &mut Tensor,
    roi: &BBox,
    out: (usize, usize),
    samples: usize,
    grad_out: &Tensor,
) -> Result<()> {
    let (c, h, w) = check(grad_map, roi, out, samples)?;
    if grad_out.shape() != [c, out.0, out.1] {
        return Err(Error::shape("roi_align_backward", grad_out.shape(), &[c, out.0, out.1]));
    }
    let bins = out.0 * out.1;
    let norm = 1.0 / (samples * samples) as f64;
    let g = grad_out.data().to_vec();
    let gm = grad_map.data_mut();
    for_each_sample(roi, out, samples, |bin, y, x| {
        let taps = bilinear_taps(h, w, y, x, Border::Clamp);
        for ch in 0..c {
            taps.scatter(&mut gm[ch * h * w..(ch + 1) * h * w], norm * g[ch * bins + bin]);
        }
    });
    Ok(())
}
