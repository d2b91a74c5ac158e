//! Finite-difference checks shared by the gradient tests and the
//! acceptance run. Each returns the worst relative error it saw.

use super::{fd_params, fd_tensor, rel_err, rng, tiny_stage2};
use defect_forge::data::Mask;
use defect_forge::geometry::{BBox, Ratio};
use defect_forge::loss::{smooth_l1, smooth_l1_grad};
use defect_forge::params::{param_count, zeros_like};
use defect_forge::stage1::{
    encode_targets, match_defaults, mine_hard_negatives, multibox_grad, multibox_loss, MatchAssignment,
    PatchExample, SsdNet, Stage1Config, Stage1Detector,
};
use defect_forge::stage2::{
    build_pyramid, build_pyramid_backward, deformable_conv2d, deformable_conv2d_backward, patch_loss,
    patch_loss_grad, roi_align, roi_align_backward, Fpn, SegmentationMask, STAGES,
};
use defect_forge::tensor::{bilinear_sample, bilinear_sample_backward, conv2d, conv2d_backward, ConvKernel, Tensor};

pub const EPS: f64 = 1e-6;
pub const OP_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;

fn weights(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

pub fn conv2d_check() -> f64 {
    let mut r = rng(1);
    let x = Tensor::randn(&[2, 3, 6, 5], 1.0, &mut r);
    let mut k = ConvKernel::normal(4, 3, 3, 2, 1, 0.5, &mut r);
    k.bias = Tensor::randn(&[4], 0.5, &mut r);
    let y = conv2d(&x, &k).unwrap();
    let w = weights(y.shape(), 2);
    let g = conv2d_backward(&x, &k, &w).unwrap();
    let e_x = fd_tensor(&x, &g.grad_input, EPS, |x| dot(&conv2d(x, &k).unwrap(), &w));
    let e_w = fd_tensor(&k.weight, &g.grad_weights, EPS, |kw| {
        let kk = ConvKernel { weight: kw.clone(), ..k.clone() };
        dot(&conv2d(&x, &kk).unwrap(), &w)
    });
    let e_b = fd_tensor(&k.bias, &g.grad_bias, EPS, |b| {
        let kk = ConvKernel { bias: b.clone(), ..k.clone() };
        dot(&conv2d(&x, &kk).unwrap(), &w)
    });
    e_x.max(e_w).max(e_b)
}

pub fn deformable_conv2d_check() -> f64 {
    let mut r = rng(3);
    let x = Tensor::randn(&[1, 2, 7, 6], 1.0, &mut r);
    let mut k = ConvKernel::normal(3, 2, 3, 1, 1, 0.5, &mut r);
    k.bias = Tensor::randn(&[3], 0.5, &mut r);
    let mut off = ConvKernel::normal(18, 2, 3, 1, 1, 0.1, &mut r);
    off.bias = Tensor::randn(&[18], 0.7, &mut r);
    let y = deformable_conv2d(&x, &k, &off).unwrap();
    let w = weights(y.shape(), 4);
    let f = |x: &Tensor, k: &ConvKernel, off: &ConvKernel| dot(&deformable_conv2d(x, k, off).unwrap(), &w);
    let g = deformable_conv2d_backward(&x, &k, &off, &w).unwrap();

    let e_x = fd_tensor(&x, &g.grad_input, EPS, |x| f(x, &k, &off));
    let e_w = fd_tensor(&k.weight, &g.grad_kernel.weight, EPS, |t| {
        f(&x, &ConvKernel { weight: t.clone(), ..k.clone() }, &off)
    });
    let e_ow = fd_tensor(&off.weight, &g.grad_offset_net.grad_weights, EPS, |t| {
        f(&x, &k, &ConvKernel { weight: t.clone(), ..off.clone() })
    });
    // A per-position shift enters exactly like the offset bias.
    let e_ob = fd_tensor(&off.bias, &g.grad_offset_net.grad_bias, EPS, |t| {
        f(&x, &k, &ConvKernel { bias: t.clone(), ..off.clone() })
    });
    e_x.max(e_w).max(e_ow).max(e_ob)
}

pub fn bilinear_sample_check() -> f64 {
    let map = Tensor::randn(&[3, 5, 6], 1.0, &mut rng(5));
    let w = [0.3, -1.2, 0.8];
    let (y, x) = (2.37, 3.61);
    let f = |m: &Tensor, y: f64, x: f64| -> f64 { bilinear_sample(m, y, x).iter().zip(&w).map(|(a, b)| a * b).sum() };
    let g = bilinear_sample_backward(&map, y, x, &w).unwrap();
    let e_map = fd_tensor(&map, &g.grad_map, EPS, |m| f(m, y, x));
    let ny = (f(&map, y + EPS, x) - f(&map, y - EPS, x)) / (2.0 * EPS);
    let nx = (f(&map, y, x + EPS) - f(&map, y, x - EPS)) / (2.0 * EPS);
    e_map.max(rel_err(g.grad_y, ny)).max(rel_err(g.grad_x, nx))
}

pub fn roi_align_check() -> f64 {
    let map = Tensor::randn(&[2, 9, 8], 1.0, &mut rng(6));
    let roi = BBox::new(1.3, 0.7, 6.9, 8.2);
    let out = roi_align(&map, &roi, (3, 4), 2).unwrap();
    let w = weights(out.shape(), 7);
    let g = roi_align_backward(map.shape(), &roi, (3, 4), 2, &w).unwrap();
    fd_tensor(&map, &g, EPS, |m| dot(&roi_align(m, &roi, (3, 4), 2).unwrap(), &w))
}

pub fn pyramid_check() -> f64 {
    let mut r = rng(8);
    let feats: Vec<Tensor> = (0..STAGES)
        .map(|k| Tensor::randn(&[1, 2, 64 >> (k + 1), 64 >> (k + 1)], 1.0, &mut r))
        .collect();
    let fpn = Fpn::new(2, 3, &mut r);
    let p = build_pyramid(&feats, &fpn).unwrap();
    let ws: Vec<Tensor> = p.levels.iter().enumerate().map(|(k, l)| weights(l.shape(), 20 + k as u64)).collect();
    let f = |feats: &[Tensor], fpn: &Fpn| -> f64 {
        let p = build_pyramid(feats, fpn).unwrap();
        p.levels.iter().zip(&ws).map(|(l, w)| dot(l, w)).sum()
    };
    let mut grads = zeros_like(&fpn);
    let g = build_pyramid_backward(&feats, &fpn, p.bias_level.shape(), &ws, &mut grads).unwrap();
    let mut worst: f64 = 0.0;
    for k in [0, 3, STAGES - 1] {
        worst = worst.max(fd_tensor(&feats[k], &g[k], EPS, |t| {
            let mut fs = feats.clone();
            fs[k] = t.clone();
            f(&fs, &fpn)
        }));
    }
    worst.max(fd_params(&fpn, &grads, EPS, |m| f(&feats, m)).0)
}

/// Softmax cross-entropy (through the multibox confidence term) and
/// smooth-L1, both alone and inside the multibox loss.
pub fn softmax_conf_smooth_l1_check() -> f64 {
    let mut r = rng(9);
    let n = 12;
    let logits: Vec<Vec<f64>> = (0..n).map(|_| Tensor::randn(&[3], 1.5, &mut r).into_data()).collect();
    let offsets: Vec<[f64; 4]> = (0..n)
        .map(|_| {
            let v = Tensor::randn(&[4], 1.0, &mut r).into_data();
            [v[0], v[1], v[2], v[3]]
        })
        .collect();
    let targets: Vec<[f64; 4]> = vec![[0.1, -0.4, 2.2, 0.0]; n];
    let assign = MatchAssignment {
        matched: (0..n).map(|i| (i % 4 == 0).then_some(0)).collect(),
        labels: (0..n).map(|i| if i % 4 == 0 { 1 + i % 2 } else { 0 }).collect(),
        pos: vec![0, 4, 8],
        neg: vec![1, 5, 6],
    };
    let mut worst: f64 = 0.0;
    for alpha in [0.0, 1.5] {
        let (dl, doff) = multibox_grad(&assign, &logits, &offsets, &targets, alpha);
        let total = |l: &[Vec<f64>], o: &[[f64; 4]]| multibox_loss(&assign, l, o, &targets, alpha).total;
        for i in [0, 1, 4, 6] {
            for c in 0..3 {
                let mut p = logits.clone();
                p[i][c] += EPS;
                let mut m = logits.clone();
                m[i][c] -= EPS;
                let num = (total(&p, &offsets) - total(&m, &offsets)) / (2.0 * EPS);
                worst = worst.max(rel_err(dl[i][c], num));
            }
            for j in 0..4 {
                let mut p = offsets.clone();
                p[i][j] += EPS;
                let mut m = offsets.clone();
                m[i][j] -= EPS;
                let num = (total(&logits, &p) - total(&logits, &m)) / (2.0 * EPS);
                if alpha > 0.0 {
                    worst = worst.max(rel_err(doff[i][j], num));
                }
            }
        }
    }
    for d in [-2.3, -0.4, 0.2, 0.99, 1.7] {
        let num = (smooth_l1(d + EPS) - smooth_l1(d - EPS)) / (2.0 * EPS);
        worst = worst.max(rel_err(smooth_l1_grad(d), num));
    }
    worst
}

pub fn patch_loss_check() -> f64 {
    let mut r = rng(10);
    let probs: Vec<f64> = Tensor::randn(&[64], 1.0, &mut r)
        .data()
        .iter()
        .map(|v| 1.0 / (1.0 + (-v).exp()))
        .collect();
    let gt = Mask::from_fn(8, 8, |x, y| (x * 3 + y * 5) % 7 < 3);
    let pred = SegmentationMask::new(8, 8, probs.clone()).unwrap();
    let g = patch_loss_grad(&pred, &gt).unwrap();
    let t = Tensor::new(&[64], probs).unwrap();
    fd_tensor(&t, &Tensor::new(&[64], g).unwrap(), EPS, |p| {
        patch_loss(&SegmentationMask::new(8, 8, p.data().to_vec()).unwrap(), &gt).unwrap()
    })
}

/// Stage-1 multibox loss through a tiny SSD, with the mined negatives frozen
/// so the loss is smooth in the parameters.
pub fn stage1_end_to_end_check() -> f64 {
    let cfg = Stage1Config {
        input_size: 16,
        channels1: 2,
        channels2: 3,
        ..Stage1Config::default()
    };
    let ratios = [Ratio::new(1.0, 1.0)];
    let net = SsdNet::new(&cfg, ratios.len(), &mut rng(11)).unwrap();
    let det = Stage1Detector::new(net.clone(), cfg.clone(), &ratios);
    let ex = PatchExample {
        input: Tensor::randn(&[1, 1, 16, 16], 1.0, &mut rng(12)),
        targets: vec![(BBox::new(3.0, 4.0, 11.0, 12.0), 1)],
    };
    let (_, grads) = det.example_grad(&net, &ex).unwrap();
    let (out, _) = net.forward(&ex.input).unwrap();
    let mut assign = match_defaults(&det.defaults.boxes, &ex.targets, cfg.match_threshold);
    mine_hard_negatives(&mut assign, &out.logits, cfg.neg_pos_ratio);
    let targets = encode_targets(&assign, &det.defaults.boxes, &ex.targets).unwrap();
    fd_params(&net, &grads, EPS, |m| {
        let (o, _) = m.forward(&ex.input).unwrap();
        multibox_loss(&assign, &o.logits, &o.offsets, &targets, cfg.alpha).total
    })
    .0
}

/// The full composite loss `L_cls + L_loc + L_pat` of the stage-2 detector,
/// on a model under 2000 parameters, with its rois held fixed.
/// Returns `(worst error, parameter count)`.
pub fn stage2_end_to_end_check() -> (f64, usize) {
    let (det, ex, rois) = tiny_stage2(13);
    let n = param_count(&det.net);
    let (loss, grads) = det.example_grad(&det.net, &ex, Some(&rois)).unwrap();
    assert!((loss.total - (loss.l_cls + loss.l_loc + loss.l_pat)).abs() < 1e-12);
    assert!(loss.l_pat > 0.0 && loss.l_loc > 0.0);
    let e = fd_params(&det.net, &grads, EPS, |m| det.example_grad(m, &ex, Some(&rois)).unwrap().0.total).0;
    (e, n)
}
