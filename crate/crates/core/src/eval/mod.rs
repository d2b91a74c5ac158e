//! Pixel, patch and image metrics, defect-area binning and training-scale
//! sweeps.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{DatasetRecord, Mask, Split};
use crate::error::{Error, Result};
use crate::pipeline::{Pipeline, StageSet};
use crate::stage1::{extract_mask, extract_patch};
use crate::train::PreparedImage;

/// Pixel confusion counts (positive = defect).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_masks(pred: &Mask, gt: &Mask) -> Result<Self> {
        if (pred.width, pred.height) != (gt.width, gt.height) {
            return Err(Error::shape("pixel_accuracy", &[pred.height, pred.width], &[gt.height, gt.width]));
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
            match (p != 0, g != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn add(&self, o: &Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `(TP + TN) / total`; 1 for an empty count.
    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 1.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// `TP / (TP + FP + FN)`; 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let d = self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }
}

/// `(TP + TN) / total pixels` of a binarized prediction.
pub fn pixel_accuracy(pred: &Mask, gt: &Mask) -> Result<f64> {
    Ok(Confusion::from_masks(pred, gt)?.accuracy())
}

/// Defect-area bins with closed lower bounds: `[0, 10%)`, `[10%, 30%)`,
/// `[30%, 100%]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AreaBin {
    #[serde(rename = "<10%")]
    Under10,
    #[serde(rename = "10-30%")]
    From10To30,
    #[serde(rename = ">30%")]
    Over30,
}

impl AreaBin {
    pub const ALL: [AreaBin; 3] = [AreaBin::Under10, AreaBin::From10To30, AreaBin::Over30];

    pub fn of(fraction: f64) -> Self {
        if fraction < 0.1 {
            AreaBin::Under10
        } else if fraction < 0.3 {
            AreaBin::From10To30
        } else {
            AreaBin::Over30
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AreaBin::Under10 => "<10%",
            AreaBin::From10To30 => "10-30%",
            AreaBin::Over30 => ">30%",
        }
    }
}

/// Partition records by ground-truth defect fraction, in [`AreaBin::ALL`] order.
pub fn bin_by_defect_area(records: &[DatasetRecord]) -> [Vec<&DatasetRecord>; 3] {
    let mut bins: [Vec<&DatasetRecord>; 3] = Default::default();
    for r in records {
        let k = AreaBin::ALL.iter().position(|b| *b == AreaBin::of(r.defect_fraction())).unwrap_or(0);
        bins[k].push(r);
    }
    bins
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub id: String,
    pub pixel_accuracy: f64,
    pub defect_fraction: f64,
    pub bin: AreaBin,
    pub confusion: Confusion,
    pub gt_defective: bool,
    pub pred_defective: bool,
    pub patches: usize,
    pub selected_patches: usize,
    /// Selected patches that contain a defect plus unselected ones that do not.
    pub correct_patch_verdicts: usize,
    /// Mask IoU per ground-truth defective patch, at network resolution.
    pub patch_mask_ious: Vec<f64>,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub bin: AreaBin,
    pub images: usize,
    /// Mean pixel accuracy, `None` for an empty bin.
    pub mean_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageEval>,
    /// Mean per-image pixel accuracy (the primary metric).
    pub mean_acc: f64,
    pub bins: Vec<BinSummary>,
    pub confusion: Confusion,
    /// Stage-1 verdicts that agree with the ground truth, over all patches.
    pub patch_selection_accuracy: f64,
    /// Mean stage-2 mask IoU over ground-truth defective patches.
    pub mean_mask_iou: Option<f64>,
    /// Images whose defective/clean call matches the ground truth.
    pub image_accuracy: f64,
    pub mean_runtime_ms: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn evaluate_one(pipeline: &Pipeline, record: &DatasetRecord, skip_stage1: bool) -> Result<ImageEval> {
    let res = pipeline.inspect(&record.image, skip_stage1)?;
    let pred = res.mask()?;
    let confusion = Confusion::from_masks(&pred, &record.mask)?;
    let prepared = PreparedImage::new(record, &pipeline.config)?;
    let correct = res
        .verdicts
        .iter()
        .filter(|v| v.selected == prepared.is_defective_patch(v.index))
        .count();
    let mut ious = Vec::new();
    if let Some(s2) = &pipeline.stage2 {
        let p = s2.net.input_size;
        for (i, patch) in prepared.grid.patches.iter().enumerate() {
            if !prepared.is_defective_patch(i) {
                continue;
            }
            let input = extract_patch(&prepared.work, &patch.bbox, p, prepared.mean)?;
            let seg = s2.segment_patch(&input)?;
            let gt = extract_mask(&prepared.mask, &patch.bbox, p);
            let c = Confusion::from_masks(&seg.mask.binarize(s2.config.mask_threshold), &gt)?;
            ious.push(c.iou());
        }
    }
    let fraction = record.defect_fraction();
    Ok(ImageEval {
        id: record.id.clone(),
        pixel_accuracy: confusion.accuracy(),
        defect_fraction: fraction,
        bin: AreaBin::of(fraction),
        confusion,
        gt_defective: record.is_defective(),
        pred_defective: pred.count() > 0,
        patches: res.verdicts.len(),
        selected_patches: res.selected_count(),
        correct_patch_verdicts: correct,
        patch_mask_ious: ious,
        runtime_ms: res.timings.total_ms,
    })
}

/// Inspect every record and aggregate the metrics. Images are processed
/// one after another so per-image runtimes are not inflated by each other.
pub fn evaluate(pipeline: &Pipeline, records: &[DatasetRecord], skip_stage1: bool) -> Result<EvalReport> {
    let images: Vec<ImageEval> = records
        .iter()
        .map(|r| evaluate_one(pipeline, r, skip_stage1))
        .collect::<Result<_>>()?;
    let n = images.len().max(1) as f64;
    let bins = AreaBin::ALL
        .iter()
        .map(|b| {
            let accs: Vec<f64> = images.iter().filter(|i| i.bin == *b).map(|i| i.pixel_accuracy).collect();
            BinSummary {
                bin: *b,
                images: accs.len(),
                mean_acc: mean(accs.into_iter()),
            }
        })
        .collect();
    let patches: usize = images.iter().map(|i| i.patches).sum();
    let correct: usize = images.iter().map(|i| i.correct_patch_verdicts).sum();
    Ok(EvalReport {
        mean_acc: mean(images.iter().map(|i| i.pixel_accuracy)).unwrap_or(0.0),
        bins,
        confusion: images.iter().fold(Confusion::default(), |c, i| c.add(&i.confusion)),
        patch_selection_accuracy: if patches == 0 { 0.0 } else { correct as f64 / patches as f64 },
        mean_mask_iou: mean(images.iter().flat_map(|i| i.patch_mask_ious.iter().copied())),
        image_accuracy: images.iter().filter(|i| i.gt_defective == i.pred_defective).count() as f64 / n,
        mean_runtime_ms: mean(images.iter().map(|i| i.runtime_ms)).unwrap_or(0.0),
        images,
    })
}

impl EvalReport {
    /// Plain-text summary table.
    pub fn to_text(&self) -> String {
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        let mut s = String::new();
        let _ = writeln!(s, "images                    {}", self.images.len());
        let _ = writeln!(s, "pixel ACC (%)             {}", pct(self.mean_acc));
        for b in &self.bins {
            let acc = b.mean_acc.map_or("-".to_string(), pct);
            let _ = writeln!(s, "  A: {:<8} n={:<4}      {}", b.bin.label(), b.images, acc);
        }
        let _ = writeln!(s, "patch selection ACC (%)   {}", pct(self.patch_selection_accuracy));
        let iou = self.mean_mask_iou.map_or("-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(s, "mean mask IoU             {iou}");
        let _ = writeln!(s, "image ACC (%)             {}", pct(self.image_accuracy));
        let c = &self.confusion;
        let _ = writeln!(s, "pixels TP/FP/TN/FN        {}/{}/{}/{}", c.tp, c.fp, c.tn, c.fn_);
        let _ = writeln!(s, "mean runtime (ms/image)   {:.1}", self.mean_runtime_ms);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub defective_images: usize,
    pub clean_images: usize,
    pub mean_acc: f64,
}

/// Training records for `fraction` of the training split, keeping the
/// defective/clean ratio. Subsets for growing fractions are nested.
pub fn scale_subset(records: &[DatasetRecord], fraction: f64, seed: u64) -> Result<Vec<DatasetRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("training fraction {fraction} must lie in (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut def, mut clean): (Vec<&DatasetRecord>, Vec<&DatasetRecord>) = records
        .iter()
        .filter(|r| r.split == Split::Train)
        .partition(|r| r.is_defective());
    def.shuffle(&mut rng);
    clean.shuffle(&mut rng);
    let take = |n: usize| ((fraction * n as f64).round() as usize).min(n);
    let (nd, nc) = (take(def.len()), take(clean.len()));
    if nd == 0 {
        return Err(Error::Dataset(format!(
            "training fraction {fraction} leaves no defective images"
        )));
    }
    Ok(def.into_iter().take(nd).chain(clean.into_iter().take(nc)).cloned().collect())
}

/// Train a fresh pipeline on each training fraction (same seed each time)
/// and report its mean pixel accuracy on the test split.
pub fn scale_sweep(records: &[DatasetRecord], fractions: &[f64], config: &Config) -> Result<Vec<SweepPoint>> {
    let test: Vec<DatasetRecord> = records.iter().filter(|r| r.split == Split::Test).cloned().collect();
    if test.is_empty() {
        return Err(Error::Dataset("scale sweep needs a test split".into()));
    }
    let mut out = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let subset = scale_subset(records, fraction, config.train.seed)?;
        let mut pipeline = Pipeline::new(config.clone())?;
        pipeline.train(&subset, StageSet::BOTH, |_, _, _| {})?;
        let accs: Vec<f64> = test
            .par_iter()
            .map(|r| {
                let res = pipeline.inspect(&r.image, false)?;
                pixel_accuracy(&res.mask()?, &r.mask)
            })
            .collect::<Result<_>>()?;
        out.push(SweepPoint {
            fraction,
            defective_images: subset.iter().filter(|r| r.is_defective()).count(),
            clean_images: subset.iter().filter(|r| !r.is_defective()).count(),
            mean_acc: mean(accs.into_iter()).unwrap_or(0.0),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_fixtures() {
        let gt = Mask::from_fn(4, 4, |x, _| x < 2);
        assert_eq!(pixel_accuracy(&gt, &gt).unwrap(), 1.0);
        let inv = Mask::from_fn(4, 4, |x, _| x >= 2);
        assert_eq!(pixel_accuracy(&inv, &gt).unwrap(), 0.0);
        let pred = Mask::from_fn(4, 4, |x, y| x < 2 || y == 0);
        assert_eq!(pixel_accuracy(&pred, &gt).unwrap(), 0.875);
        let pred = Mask::from_fn(4, 4, |x, y| if y == 3 { x >= 2 } else { x < 2 });
        assert_eq!(pixel_accuracy(&pred, &gt).unwrap(), 0.75);
        assert!(pixel_accuracy(&Mask::zeros(4, 3), &gt).is_err());
    }

    #[test]
    fn bin_boundaries() {
        assert_eq!(AreaBin::of(0.0), AreaBin::Under10);
        assert_eq!(AreaBin::of(0.1), AreaBin::From10To30);
        assert_eq!(AreaBin::of(0.3), AreaBin::Over30);
        assert_eq!(AreaBin::of(1.0), AreaBin::Over30);
    }
}
