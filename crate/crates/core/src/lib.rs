//! Two-stage surface-defect inspection.
//!
//! Stage 1 tiles an image into multi-scale patches and scores each patch with
//! a compact SSD-style detector; stage 2 segments the selected patches with a
//! small region-based detector (residual backbone, deformable kernel, feature
//! pyramid, region proposals, ROI Align and a per-ROI mask head).
//!
//! All numerics are float64 with hand-written backward passes.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod params;
pub mod pipeline;
pub mod stage1;
pub mod stage2;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
