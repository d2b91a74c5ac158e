//! Two-stage inspection of whole images, with checkpoint persistence.

use std::path::Path;
use std::time::Instant;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{load_checkpoint, rle_decode, rle_encode, save_checkpoint, Checkpoint, DatasetRecord, Mask, Split};
use crate::error::{Error, Result};
use crate::geometry::{slice_image, BBox};
use crate::loss::LossBreakdown;
use crate::params::{load_named, named_tensors};
use crate::stage1::{
    extract_patch, patch_bounds, preprocess, score_grid, train_stage1, Detection, PatchVerdict, SsdNet, Stage1Detector,
};
use crate::stage2::{train_stage2, Stage2Detector, Stage2Net};
use crate::tensor::{resample_plane, Filter, Tensor};
use crate::train::prepare_all;

const CONFIG_ENTRY: &str = "pipeline.config";
const STAGE1_ARCH: &str = "stage1.arch";
const STAGE2_ARCH: &str = "stage2.arch";
const STAGE1_PREFIX: &str = "stage1.";
const STAGE2_PREFIX: &str = "stage2.";

/// Wall-clock time spent in each part of [`Pipeline::inspect`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub preprocess_ms: f64,
    pub stage1_ms: f64,
    pub stage2_ms: f64,
    pub total_ms: f64,
}

/// Outcome of inspecting one image. Boxes and the mask are in the
/// original image frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionResult {
    pub width: usize,
    pub height: usize,
    pub stage1_enabled: bool,
    /// Every patch of the grid. With stage 1 disabled all are selected and
    /// carry a defect score of 1.
    pub verdicts: Vec<PatchVerdict>,
    /// Stage-2 detections.
    pub detections: Vec<Detection>,
    /// Binary defect mask, run-length encoded (column-major, 1-indexed).
    pub mask_rle: String,
    pub defect_pixels: usize,
    pub timings: Timings,
}

impl InspectionResult {
    pub fn mask(&self) -> Result<Mask> {
        rle_decode(&self.mask_rle, self.height, self.width)
    }

    pub fn selected_count(&self) -> usize {
        self.verdicts.iter().filter(|v| v.selected).count()
    }
}

/// Which trained stages a checkpoint should contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSet {
    pub stage1: bool,
    pub stage2: bool,
}

impl StageSet {
    pub const BOTH: StageSet = StageSet {
        stage1: true,
        stage2: true,
    };
}

/// Configuration plus the two detectors. A stage may be absent when only
/// the other one has been trained.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: Config,
    pub stage1: Option<Stage1Detector>,
    pub stage2: Option<Stage2Detector>,
}

impl Pipeline {
    /// Freshly initialised networks for `config`, seeded by `config.train.seed`.
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let ratios = &config.slice.ratios;
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let s1 = SsdNet::new(&config.stage1, ratios.len(), &mut rng)?;
        let s2 = Stage2Net::new(&config.stage2, ratios.len(), &mut rng)?;
        Ok(Self {
            stage1: Some(Stage1Detector::new(s1, config.stage1.clone(), ratios)),
            stage2: Some(Stage2Detector::new(s2, config.stage2.clone(), ratios)),
            config,
        })
    }

    fn stage1(&self) -> Result<&Stage1Detector> {
        self.stage1
            .as_ref()
            .ok_or_else(|| Error::invalid("pipeline has no stage-1 network"))
    }

    fn stage2(&self) -> Result<&Stage2Detector> {
        self.stage2
            .as_ref()
            .ok_or_else(|| Error::invalid("pipeline has no stage-2 network"))
    }

    /// Run stage 1 (unless `skip_stage1`) and stage 2 on the selected
    /// patches, merging per-patch masks by per-pixel max.
    pub fn inspect(&self, image: &RgbImage, skip_stage1: bool) -> Result<InspectionResult> {
        let start = Instant::now();
        let s2 = self.stage2()?;
        let ws = self.config.working_size;
        let work = preprocess(image, ws)?;
        let mean = work.sum() / work.len() as f64;
        let grid = slice_image((ws, ws), &self.config.slice)?;
        let t_pre = start.elapsed();

        let mut verdicts = if skip_stage1 {
            grid.patches
                .iter()
                .enumerate()
                .map(|(index, p)| PatchVerdict {
                    index,
                    patch: p.bbox,
                    scale_index: p.scale_index,
                    ratio_index: p.ratio_index,
                    defect_score: 1.0,
                    selected: true,
                    detections: Vec::new(),
                })
                .collect()
        } else {
            score_grid(&work, &grid, self.stage1()?)?
        };
        let t_s1 = start.elapsed();

        let p = s2.net.input_size;
        let selected: Vec<&PatchVerdict> = verdicts.iter().filter(|v| v.selected).collect();
        let segs = selected
            .par_iter()
            .map(|v| {
                let input = extract_patch(&work, &v.patch, p, mean)?;
                s2.segment_patch(&input)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut canvas = vec![0.0f64; ws * ws];
        let mut detections = Vec::new();
        for (v, seg) in selected.iter().zip(&segs) {
            let (x0, y0, x1, y1) = patch_bounds(&v.patch, ws, ws);
            let (pw, ph) = (x1 - x0, y1 - y0);
            let local = resample_plane(&seg.mask.values, p, p, ph, pw, Filter::Bilinear);
            for y in 0..ph {
                for x in 0..pw {
                    let c = &mut canvas[(y0 + y) * ws + x0 + x];
                    *c = (*c).max(local[y * pw + x]);
                }
            }
            let (sx, sy) = (pw as f64 / p as f64, ph as f64 / p as f64);
            detections.extend(seg.detections.iter().map(|d| Detection {
                bbox: d.bbox.scale(sx, sy).translate(x0 as f64, y0 as f64),
                ..*d
            }));
        }
        let t_s2 = start.elapsed();

        let (w, h) = (image.width() as usize, image.height() as usize);
        let full = resample_plane(&canvas, ws, ws, h, w, Filter::Bilinear);
        let thr = s2.config.mask_threshold;
        let mask = Mask::from_fn(w, h, |x, y| full[y * w + x] >= thr);
        let (fx, fy) = (w as f64 / ws as f64, h as f64 / ws as f64);
        let to_image = |b: BBox| b.scale(fx, fy);
        for v in &mut verdicts {
            v.patch = to_image(v.patch);
            for d in &mut v.detections {
                d.bbox = to_image(d.bbox);
            }
        }
        for d in &mut detections {
            d.bbox = to_image(d.bbox);
        }
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        Ok(InspectionResult {
            width: w,
            height: h,
            stage1_enabled: !skip_stage1,
            verdicts,
            detections,
            mask_rle: rle_encode(&mask),
            defect_pixels: mask.count(),
            timings: Timings {
                preprocess_ms: ms(t_pre),
                stage1_ms: ms(t_s1 - t_pre),
                stage2_ms: ms(t_s2 - t_s1),
                total_ms: ms(start.elapsed()),
            },
        })
    }

    /// Checkpoint holding the configuration and the requested stages.
    pub fn to_checkpoint(&self, stages: StageSet) -> Result<Checkpoint> {
        let text = self.config.to_text();
        let bytes: Vec<f64> = text.bytes().map(f64::from).collect();
        let mut entries = vec![(CONFIG_ENTRY.to_string(), Tensor::new(&[bytes.len()], bytes)?)];
        if stages.stage1 {
            let d = self.stage1()?;
            entries.push((STAGE1_ARCH.to_string(), d.net.arch()));
            entries.extend(named_tensors(&d.net, STAGE1_PREFIX));
        }
        if stages.stage2 {
            let d = self.stage2()?;
            entries.push((STAGE2_ARCH.to_string(), d.net.arch()));
            entries.extend(named_tensors(&d.net, STAGE2_PREFIX));
        }
        Ok(Checkpoint::new(entries))
    }

    /// Rebuild a pipeline from a checkpoint. Entries the pipeline does not
    /// know are errors.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let text_t = ck
            .get(CONFIG_ENTRY)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {CONFIG_ENTRY}")))?;
        let bytes: Vec<u8> = text_t
            .data()
            .iter()
            .map(|&v| {
                if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                    Ok(v as u8)
                } else {
                    Err(Error::Checkpoint(format!("{CONFIG_ENTRY} holds a non-byte value {v}")))
                }
            })
            .collect::<Result<_>>()?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Checkpoint(format!("{CONFIG_ENTRY}: {e}")))?;
        let config = Config::parse(&text)?;
        let lookup = |k: &str| ck.get(k).cloned();
        let ratios = &config.slice.ratios;

        let stage1 = match ck.get(STAGE1_ARCH) {
            Some(arch) => {
                let mut net = SsdNet::from_arch(arch)?;
                load_named(&mut net, STAGE1_PREFIX, &lookup)?;
                Some(Stage1Detector::new(net, config.stage1.clone(), ratios))
            }
            None => None,
        };
        let stage2 = match ck.get(STAGE2_ARCH) {
            Some(arch) => {
                let mut net = Stage2Net::from_arch(arch)?;
                load_named(&mut net, STAGE2_PREFIX, &lookup)?;
                Some(Stage2Detector::new(net, config.stage2.clone(), ratios))
            }
            None => None,
        };
        let pipeline = Self {
            config,
            stage1,
            stage2,
        };
        let expected: Vec<String> = pipeline
            .to_checkpoint(StageSet {
                stage1: pipeline.stage1.is_some(),
                stage2: pipeline.stage2.is_some(),
            })?
            .entries
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        if let Some(extra) = ck.names().find(|n| !expected.iter().any(|e| e == n)) {
            return Err(Error::Checkpoint(format!("unknown entry {extra}")));
        }
        Ok(pipeline)
    }

    pub fn save(&self, path: &Path, stages: StageSet) -> Result<()> {
        save_checkpoint(path, &self.to_checkpoint(stages)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }
}

/// Mean losses per epoch of each trained stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage1: Vec<LossBreakdown>,
    pub stage2: Vec<LossBreakdown>,
}

impl Pipeline {
    /// Train the requested stages on the training split of `records`.
    /// `log` sees `(stage, epoch, mean loss)` after every epoch.
    pub fn train(
        &mut self,
        records: &[DatasetRecord],
        stages: StageSet,
        mut log: impl FnMut(usize, usize, &LossBreakdown),
    ) -> Result<TrainReport> {
        let train: Vec<DatasetRecord> = records.iter().filter(|r| r.split == Split::Train).cloned().collect();
        if train.is_empty() {
            return Err(Error::Dataset("no training records".into()));
        }
        let images = prepare_all(&train, &self.config)?;
        let mut report = TrainReport::default();
        let tc = self.config.train.clone();
        if stages.stage1 {
            let det = self
                .stage1
                .as_mut()
                .ok_or_else(|| Error::invalid("pipeline has no stage-1 network"))?;
            report.stage1 = train_stage1(det, &images, &tc, |e, l| log(1, e, l))?;
        }
        if stages.stage2 {
            let min_fraction = self.config.stage1.min_defect_fraction;
            let det = self
                .stage2
                .as_mut()
                .ok_or_else(|| Error::invalid("pipeline has no stage-2 network"))?;
            report.stage2 = train_stage2(det, &images, &tc, min_fraction, |e, l| log(2, e, l))?;
        }
        Ok(report)
    }
}
