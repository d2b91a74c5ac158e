//! Independent reference implementations and the checks that compare the
//! library against them. Each check returns `Err` with a description of the
//! first disagreement.

use rand::Rng;

use super::rng;
use defect_forge::config::Config;
use defect_forge::data::{rle_decode, rle_encode, Checkpoint, Mask};
use defect_forge::geometry::{decode_offsets, encode_offsets, jaccard, match_boxes, nms_indices, BBox};
use defect_forge::pipeline::{Pipeline, StageSet};
use defect_forge::stage2::{deformable_conv2d, roi_align};
use defect_forge::tensor::{conv2d, softmax, ConvKernel, Tensor};

pub type Check = Result<String, String>;

fn int_box(r: &mut impl Rng, span: i32) -> BBox {
    let x0 = r.random_range(0..span);
    let y0 = r.random_range(0..span);
    let x1 = r.random_range(x0 + 1..=span);
    let y1 = r.random_range(y0 + 1..=span);
    BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64)
}

fn covers(b: &BBox, x: i32, y: i32) -> bool {
    let (x, y) = (x as f64, y as f64);
    b.x_min <= x && x + 1.0 <= b.x_max && b.y_min <= y && y + 1.0 <= b.y_max
}

/// Overlap by counting the unit pixels each box covers.
pub fn pixel_jaccard(a: &BBox, b: &BBox, span: i32) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for y in 0..span {
        for x in 0..span {
            let (ia, ib) = (covers(a, x, y), covers(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn jaccard_vs_pixels(cases: usize) -> Check {
    let mut r = rng(101);
    let span = 64;
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let (a, b) = (int_box(&mut r, span), int_box(&mut r, span));
        // Bias half the pairs towards overlap.
        let b = if i % 2 == 0 { a.translate(r.random_range(-8..=8) as f64, r.random_range(-8..=8) as f64).clip(64.0, 64.0) } else { b };
        if b.area() == 0.0 {
            continue;
        }
        let (got, want) = (jaccard(&a, &b), pixel_jaccard(&a, &b, span));
        worst = worst.max((got - want).abs());
        if (got - want).abs() > 1e-9 {
            return Err(format!("jaccard({a:?}, {b:?}) = {got}, pixel count gives {want}"));
        }
    }
    Ok(format!("{cases} pairs, max |err| {worst:.1e}"))
}

/// Textbook NMS: repeatedly take the best remaining box (earliest on ties)
/// and discard everything overlapping it above the threshold.
pub fn reference_nms(boxes: &[BBox], scores: &[f64], thr: f64) -> Vec<usize> {
    let mut alive: Vec<bool> = vec![true; boxes.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..boxes.len() {
            if alive[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        kept.push(b);
        for i in 0..boxes.len() {
            if alive[i] && (i == b || jaccard(&boxes[i], &boxes[b]) > thr) {
                alive[i] = false;
            }
        }
    }
    kept
}

pub fn nms_vs_reference(cases: usize) -> Check {
    let mut r = rng(102);
    for case in 0..cases {
        let n = r.random_range(0..40);
        let boxes: Vec<BBox> = (0..n).map(|_| int_box(&mut r, 32)).collect();
        // Coarse scores so ties actually happen.
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..10) as f64 / 10.0).collect();
        let thr = [0.3, 0.45, 0.5, 0.7][case % 4];
        let (got, want) = (nms_indices(&boxes, &scores, thr), reference_nms(&boxes, &scores, thr));
        if got != want {
            return Err(format!("case {case}: nms kept {got:?}, reference kept {want:?}"));
        }
    }
    Ok(format!("{cases} cases identical"))
}

pub fn coding_roundtrip(cases: usize) -> Check {
    let mut r = rng(103);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let rand_box = |r: &mut rand_chacha::ChaCha8Rng| {
            let (cx, cy) = (r.random_range(-50.0..150.0), r.random_range(-50.0..150.0));
            BBox::from_center(cx, cy, r.random_range(0.5..120.0), r.random_range(0.5..120.0))
        };
        let (g, a) = (rand_box(&mut r), rand_box(&mut r));
        let back = decode_offsets(&encode_offsets(&g, &a).map_err(|e| e.to_string())?, &a);
        for (u, v) in [(back.x_min, g.x_min), (back.y_min, g.y_min), (back.x_max, g.x_max), (back.y_max, g.y_max)] {
            worst = worst.max((u - v).abs());
        }
    }
    if worst > 1e-9 {
        return Err(format!("max roundtrip error {worst:e}"));
    }
    Ok(format!("{cases} pairs, max |err| {worst:.1e}"))
}

/// Exhaustive matcher: each default takes its best ground truth when that
/// overlap reaches the threshold; then every ground truth in turn claims the
/// best default nobody has claimed yet (earliest on ties).
pub fn brute_force_match(defaults: &[BBox], gts: &[BBox], thr: f64) -> Vec<Option<usize>> {
    let mut out: Vec<Option<usize>> = defaults
        .iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                let v = jaccard(d, g);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            best.filter(|&(_, v)| v >= thr).map(|(j, _)| j)
        })
        .collect();
    let mut claimed: Vec<usize> = Vec::new();
    for (j, g) in gts.iter().enumerate() {
        let candidates = (0..defaults.len()).filter(|i| !claimed.contains(i));
        let best = candidates.fold(None::<(usize, f64)>, |acc, i| {
            let v = jaccard(&defaults[i], g);
            match acc {
                Some((_, b)) if b >= v => acc,
                _ => Some((i, v)),
            }
        });
        if let Some((i, _)) = best {
            claimed.push(i);
            out[i] = Some(j);
        }
    }
    out
}

pub fn match_vs_brute_force(cases: usize) -> Check {
    let mut r = rng(104);
    for case in 0..cases {
        // A 4x4 grid of three box sizes, as a small default-box set.
        let mut defaults = Vec::new();
        for gy in 0..4 {
            for gx in 0..4 {
                for s in [6.0, 10.0, 16.0] {
                    defaults.push(BBox::from_center(4.0 + 8.0 * gx as f64, 4.0 + 8.0 * gy as f64, s, s));
                }
            }
        }
        let gts: Vec<BBox> = (0..r.random_range(0..5)).map(|_| int_box(&mut r, 32)).collect();
        let thr = [0.5, 0.3, 0.7][case % 3];
        let (got, want) = (match_boxes(&defaults, &gts, thr), brute_force_match(&defaults, &gts, thr));
        if got != want {
            return Err(format!("case {case}: matcher disagrees with exhaustive search"));
        }
        // Every ground truth owns at least one default box.
        for j in 0..gts.len() {
            if !got.contains(&Some(j)) {
                return Err(format!("case {case}: ground truth {j} unmatched"));
            }
        }
    }
    Ok(format!("{cases} cases identical"))
}

pub fn deform_zero_offsets_is_conv() -> Check {
    let mut r = rng(105);
    for (n, c, h, w, o) in [(1, 1, 5, 5, 1), (2, 3, 7, 6, 4), (1, 4, 16, 16, 4)] {
        let x = Tensor::randn(&[n, c, h, w], 1.0, &mut r);
        let mut k = ConvKernel::normal(o, c, 3, 1, 1, 0.5, &mut r);
        k.bias = Tensor::randn(&[o], 0.5, &mut r);
        let off = ConvKernel::zeros(18, c, 3, 1, 1);
        let a = deformable_conv2d(&x, &k, &off).map_err(|e| e.to_string())?;
        let b = conv2d(&x, &k).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{n}x{c}x{h}x{w}: outputs differ"));
        }
    }
    Ok("bit-identical on 3 shapes".into())
}

pub fn roi_align_constant_map() -> Check {
    let mut r = rng(106);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let v = r.random_range(-5.0..5.0);
        let (h, w) = (r.random_range(2..20), r.random_range(2..20));
        let map = Tensor::full(&[2, h, w], v);
        let x0 = r.random_range(-3.0..w as f64);
        let y0 = r.random_range(-3.0..h as f64);
        let roi = BBox::new(x0, y0, x0 + r.random_range(0.1..12.0), y0 + r.random_range(0.1..12.0));
        let out = roi_align(&map, &roi, (r.random_range(1..8), r.random_range(1..8)), r.random_range(1..4))
            .map_err(|e| e.to_string())?;
        for &o in out.data() {
            worst = worst.max((o - v).abs());
        }
    }
    if worst > 1e-12 {
        return Err(format!("max deviation {worst:e}"));
    }
    Ok(format!("200 rois, max deviation {worst:.1e}"))
}

pub fn softmax_sums_to_one() -> Check {
    let mut r = rng(107);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let n = r.random_range(1..12);
        let scale = [1.0, 30.0, 800.0][i % 3];
        let z: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0) * scale).collect();
        let p = softmax(&z);
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(format!("probability out of range for {z:?}"));
        }
        worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    if worst > 1e-9 {
        return Err(format!("max |sum - 1| {worst:e}"));
    }
    Ok(format!("1000 vectors, max |sum - 1| {worst:.1e}"))
}

pub fn random_mask(r: &mut impl Rng) -> Mask {
    let (w, h) = (r.random_range(1..40), r.random_range(1..40));
    let density: f64 = r.random_range(0.0..1.0);
    let blobs = r.random_bool(0.5);
    let seed_x = r.random_range(0..w);
    Mask::from_fn(w, h, |x, y| {
        if blobs {
            (x + seed_x) % 7 < 3 && (y * 3 + x) % 5 != 0
        } else {
            r.random_bool(density)
        }
    })
}

pub fn rle_roundtrips(cases: usize) -> Check {
    let mut r = rng(108);
    for i in 0..cases {
        let m = random_mask(&mut r);
        let text = rle_encode(&m);
        let back = rle_decode(&text, m.height, m.width).map_err(|e| e.to_string())?;
        if back != m {
            return Err(format!("mask {i}: decode(encode(m)) != m"));
        }
        // The other direction: a canonical string survives decode + encode.
        if rle_encode(&back) != text {
            return Err(format!("mask {i}: encode(decode(s)) != s"));
        }
    }
    Ok(format!("{cases} masks, both directions"))
}

/// A fresh pipeline written to bytes, read back and written again gives the
/// same bytes, and every parameter keeps its exact bit pattern.
pub fn checkpoint_roundtrip() -> Check {
    let mut cfg = Config::default();
    cfg.train.seed = 109;
    let pipe = Pipeline::new(cfg).map_err(|e| e.to_string())?;
    let ck = pipe.to_checkpoint(StageSet::BOTH).map_err(|e| e.to_string())?;
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
    for ((na, ta), (nb, tb)) in ck.entries.iter().zip(&back.entries) {
        let same = na == nb
            && ta.shape() == tb.shape()
            && ta.data().iter().zip(tb.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(format!("entry `{na}` changed"));
        }
    }
    if back.entries.len() != ck.entries.len() {
        return Err("entry count changed".into());
    }
    let reloaded = Pipeline::from_checkpoint(&back).map_err(|e| e.to_string())?;
    let again = reloaded.to_checkpoint(StageSet::BOTH).map_err(|e| e.to_string())?.to_bytes();
    if again != bytes {
        return Err("pipeline reload does not reproduce the checkpoint bytes".into());
    }
    Ok(format!("{} entries, {} bytes identical", ck.entries.len(), bytes.len()))
}
