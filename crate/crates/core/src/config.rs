//! Flat `key = value` configuration.
//!
//! Blank lines and text after `#` are ignored. Lists are comma-separated.
//! `learning_rate` and `epochs` set both stages at once; the `stage1.` and
//! `stage2.` variants set one stage. Later lines override earlier ones.
//! Unknown keys are errors. [`Config::to_text`] prints every key with its
//! current value.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ratio, SliceConfig};
use crate::stage1::Stage1Config;
use crate::stage2::Stage2Config;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Side of the square frame images are resized to before slicing.
    pub working_size: usize,
    pub slice: SliceConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            working_size: 512,
            slice: SliceConfig::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            train: TrainConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::ConfigValue {
        key: key.to_string(),
        reason: format!("cannot parse `{value}`"),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigValue {
                key: format!("line {}", n + 1),
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (s1, s2, t) = (&mut self.stage1, &mut self.stage2, &mut self.train);
        match key {
            "working_size" => self.working_size = parse_value(key, v)?,
            "scales" => self.slice.scales = parse_list(key, v)?,
            "ratios" => self.slice.ratios = parse_list::<Ratio>(key, v)?,
            "stride_fraction" => self.slice.stride_fraction = parse_value(key, v)?,

            "alpha" => s1.alpha = parse_value(key, v)?,
            "neg_pos_ratio" => s1.neg_pos_ratio = parse_value(key, v)?,
            "match_threshold" => s1.match_threshold = parse_value(key, v)?,
            "selection_threshold" => s1.selection_threshold = parse_value(key, v)?,
            "min_defect_fraction" => s1.min_defect_fraction = parse_value(key, v)?,
            "stage1.input_size" => s1.input_size = parse_value(key, v)?,
            "stage1.channels1" => s1.channels1 = parse_value(key, v)?,
            "stage1.channels2" => s1.channels2 = parse_value(key, v)?,
            "stage1.num_classes" => s1.num_classes = parse_value(key, v)?,
            "stage1.box_scales" => s1.box_scales = parse_list(key, v)?,
            "stage1.nms_threshold" => s1.nms_threshold = parse_value(key, v)?,

            "stage2.input_size" => s2.input_size = parse_value(key, v)?,
            "stage2.channels" => s2.channels = parse_value(key, v)?,
            "stage2.fpn_channels" => s2.fpn_channels = parse_value(key, v)?,
            "stage2.hidden" => s2.hidden = parse_value(key, v)?,
            "stage2.anchor_size" => s2.anchor_size = parse_value(key, v)?,
            "stage2.rpn_nms" => s2.rpn_nms = parse_value(key, v)?,
            "stage2.top_k" => s2.top_k = parse_value(key, v)?,
            "stage2.train_top_k" => s2.train_top_k = parse_value(key, v)?,
            "stage2.samples_per_bin" => s2.samples_per_bin = parse_value(key, v)?,
            "stage2.detection_threshold" => s2.detection_threshold = parse_value(key, v)?,
            "stage2.detection_nms" => s2.detection_nms = parse_value(key, v)?,
            "stage2.mask_threshold" => s2.mask_threshold = parse_value(key, v)?,

            "seed" => t.seed = parse_value(key, v)?,
            "batch_size" => t.batch_size = parse_value(key, v)?,
            "grad_clip" => t.grad_clip = parse_value(key, v)?,
            "learning_rate" => {
                t.stage1_learning_rate = parse_value(key, v)?;
                t.stage2_learning_rate = t.stage1_learning_rate;
            }
            "epochs" => {
                t.stage1_epochs = parse_value(key, v)?;
                t.stage2_epochs = t.stage1_epochs;
            }
            "stage1.learning_rate" => t.stage1_learning_rate = parse_value(key, v)?,
            "stage1.epochs" => t.stage1_epochs = parse_value(key, v)?,
            "stage1.patches_per_image" => t.stage1_patches_per_image = parse_value(key, v)?,
            "stage2.learning_rate" => t.stage2_learning_rate = parse_value(key, v)?,
            "stage2.epochs" => t.stage2_epochs = parse_value(key, v)?,
            "stage2.patches_per_image" => t.stage2_patches_per_image = parse_value(key, v)?,
            _ => return Err(Error::UnknownConfigKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::ConfigValue {
                key: key.to_string(),
                reason: reason.to_string(),
            })
        };
        let min_scale = self.slice.scales.iter().copied().min().unwrap_or(0);
        if self.slice.scales.is_empty() || min_scale == 0 {
            return bad("scales", "need at least one positive scale");
        }
        if self.working_size < min_scale {
            return bad("working_size", "must be at least the smallest scale");
        }
        if self.slice.ratios.is_empty() {
            return bad("ratios", "need at least one ratio");
        }
        if !(self.slice.stride_fraction > 0.0 && self.slice.stride_fraction <= 1.0) {
            return bad("stride_fraction", "must lie in (0, 1]");
        }
        if self.stage1.box_scales.len() != crate::stage1::LEVELS {
            return bad("stage1.box_scales", "need exactly one scale per detection level (3)");
        }
        if self.stage1.num_classes == 0 {
            return bad("stage1.num_classes", "must be at least 1");
        }
        if self.stage2.input_size < crate::stage2::MIN_INPUT {
            return bad("stage2.input_size", "too small for the six-level pyramid (minimum 64)");
        }
        if self.stage2.samples_per_bin == 0 || self.stage2.top_k == 0 {
            return bad("stage2.top_k", "top_k and samples_per_bin must be positive");
        }
        if self.train.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        for (k, p) in [
            ("selection_threshold", self.stage1.selection_threshold),
            ("match_threshold", self.stage1.match_threshold),
            ("stage2.detection_threshold", self.stage2.detection_threshold),
            ("stage2.mask_threshold", self.stage2.mask_threshold),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(k, "must lie in [0, 1]");
            }
        }
        Ok(())
    }

    /// Every key with its current value, parseable by [`Config::parse`].
    pub fn to_text(&self) -> String {
        let (s1, s2, t) = (&self.stage1, &self.stage2, &self.train);
        let lines = [
            ("working_size", self.working_size.to_string()),
            ("scales", join(&self.slice.scales)),
            ("ratios", join(&self.slice.ratios)),
            ("stride_fraction", self.slice.stride_fraction.to_string()),
            ("alpha", s1.alpha.to_string()),
            ("neg_pos_ratio", s1.neg_pos_ratio.to_string()),
            ("match_threshold", s1.match_threshold.to_string()),
            ("selection_threshold", s1.selection_threshold.to_string()),
            ("min_defect_fraction", s1.min_defect_fraction.to_string()),
            ("stage1.input_size", s1.input_size.to_string()),
            ("stage1.channels1", s1.channels1.to_string()),
            ("stage1.channels2", s1.channels2.to_string()),
            ("stage1.num_classes", s1.num_classes.to_string()),
            ("stage1.box_scales", join(&s1.box_scales)),
            ("stage1.nms_threshold", s1.nms_threshold.to_string()),
            ("stage2.input_size", s2.input_size.to_string()),
            ("stage2.channels", s2.channels.to_string()),
            ("stage2.fpn_channels", s2.fpn_channels.to_string()),
            ("stage2.hidden", s2.hidden.to_string()),
            ("stage2.anchor_size", s2.anchor_size.to_string()),
            ("stage2.rpn_nms", s2.rpn_nms.to_string()),
            ("stage2.top_k", s2.top_k.to_string()),
            ("stage2.train_top_k", s2.train_top_k.to_string()),
            ("stage2.samples_per_bin", s2.samples_per_bin.to_string()),
            ("stage2.detection_threshold", s2.detection_threshold.to_string()),
            ("stage2.detection_nms", s2.detection_nms.to_string()),
            ("stage2.mask_threshold", s2.mask_threshold.to_string()),
            ("seed", t.seed.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("grad_clip", t.grad_clip.to_string()),
            ("stage1.learning_rate", t.stage1_learning_rate.to_string()),
            ("stage1.epochs", t.stage1_epochs.to_string()),
            ("stage1.patches_per_image", t.stage1_patches_per_image.to_string()),
            ("stage2.learning_rate", t.stage2_learning_rate.to_string()),
            ("stage2.epochs", t.stage2_epochs.to_string()),
            ("stage2.patches_per_image", t.stage2_patches_per_image.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
