#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;

use defect_forge::data::Mask;
use defect_forge::geometry::{BBox, Ratio};
use defect_forge::params::ParamSet;
use defect_forge::stage2::{Stage2Config, Stage2Detector, Stage2Example, Stage2Net};
use defect_forge::tensor::{ConvKernel, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Largest relative error between `grad` and central differences of `f`
/// around `x`, over every element.
pub fn fd_tensor(x: &Tensor, grad: &Tensor, eps: f64, f: impl Fn(&Tensor) -> f64) -> f64 {
    assert_eq!(x.shape(), grad.shape());
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut p = x.clone();
        p.data_mut()[i] += eps;
        let mut m = x.clone();
        m.data_mut()[i] -= eps;
        let n = (f(&p) - f(&m)) / (2.0 * eps);
        worst = worst.max(rel_err(grad.data()[i], n));
    }
    worst
}

fn nudge<M: ParamSet + Clone>(model: &M, index: usize, delta: f64) -> M {
    let mut out = model.clone();
    let mut seen = 0;
    out.visit_mut(&mut |_, t| {
        let n = t.len();
        if (seen..seen + n).contains(&index) {
            t.data_mut()[index - seen] += delta;
        }
        seen += n;
    });
    out
}

/// Largest relative error between the parameter gradient `grads` and
/// central differences of `loss`, with the worst parameter's name.
pub fn fd_params<M: ParamSet + Clone>(model: &M, grads: &M, eps: f64, loss: impl Fn(&M) -> f64) -> (f64, String) {
    let mut analytic = Vec::new();
    let mut names = Vec::new();
    grads.visit(&mut |name, t| {
        for (k, &v) in t.data().iter().enumerate() {
            analytic.push(v);
            names.push(format!("{name}[{k}]"));
        }
    });
    let mut worst = (0.0, String::new());
    for (i, &a) in analytic.iter().enumerate() {
        let n = (loss(&nudge(model, i, eps)) - loss(&nudge(model, i, -eps))) / (2.0 * eps);
        let e = rel_err(a, n);
        if e > worst.0 {
            worst = (e, names[i].clone());
        }
    }
    worst
}

/// A stage-2 model small enough for a full finite-difference sweep, with a
/// one-defect example and fixed rois covering foreground, background and a
/// coarser pyramid level.
pub fn tiny_stage2(seed: u64) -> (Stage2Detector, Stage2Example, Vec<BBox>) {
    let mut r = rng(seed);
    let cfg = Stage2Config {
        input_size: 64,
        channels: 2,
        fpn_channels: 2,
        hidden: 4,
        ..Stage2Config::default()
    };
    let ratios = [Ratio::new(1.0, 1.0), Ratio::new(1.0, 2.0), Ratio::new(2.0, 1.0)];
    let mut net = Stage2Net::new(&cfg, ratios.len(), &mut r).unwrap();
    // Nonzero offsets keep deformable taps away from lattice points, where
    // bilinear sampling has kinks.
    net.backbone.dk_offset = ConvKernel::normal(18, 2, 3, 1, 1, 0.05, &mut r);
    net.backbone.dk_offset.bias = Tensor::randn(&[18], 0.3, &mut r);
    for l in [&mut net.roi_head.cls, &mut net.roi_head.bbox] {
        l.weight = Tensor::randn(l.weight.shape(), 0.3, &mut r);
    }
    net.rpn.cls.weight = Tensor::randn(net.rpn.cls.weight.shape(), 0.3, &mut r);
    net.rpn.bbox.weight = Tensor::randn(net.rpn.bbox.weight.shape(), 0.3, &mut r);
    // Zero biases behind dead relus give pre-activations of exactly zero,
    // right on the kink.
    net.visit_mut(&mut |name, t| {
        if name.ends_with(".bias") {
            let noise = Tensor::randn(t.shape(), 0.1, &mut r);
            t.add_assign(&noise).unwrap();
        }
    });
    let det = Stage2Detector::new(net, cfg, &ratios);

    let mask = Mask::from_fn(64, 64, |x, y| (20..34).contains(&x) && (24..32).contains(&y));
    let input = Tensor::from_fn(&[1, 1, 64, 64], |i| {
        let (y, x) = (i / 64, i % 64);
        let d = if mask.get(x, y) { -1.0 } else { 0.0 };
        d + 0.3 * ((i as f64) * 0.37).sin()
    });
    let gt = BBox::new(20.0, 24.0, 34.0, 32.0);
    let rois = vec![
        gt,
        BBox::new(21.3, 23.1, 35.7, 31.4),
        BBox::new(2.5, 40.2, 14.1, 58.6),
        BBox::new(8.2, 6.4, 52.9, 49.3),
    ];
    let ex = Stage2Example {
        input,
        mask,
        boxes: vec![gt],
    };
    (det, ex, rois)
}
