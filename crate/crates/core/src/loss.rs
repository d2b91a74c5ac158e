//! Scalar loss pieces shared by both stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `0.5 d²` for `|d| < 1`, `|d| - 0.5` otherwise.
#[inline]
pub fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

#[inline]
pub fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

/// Probability clamp used by every binary cross-entropy in the crate.
pub const PROB_EPS: f64 = 1e-7;

/// `-[g ln p + (1-g) ln(1-p)]` with `p` clamped to `[PROB_EPS, 1 - PROB_EPS]`.
#[inline]
pub fn bce(p: f64, g: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
}

/// d bce / d p; zero where the clamp is active.
#[inline]
pub fn bce_grad(p: f64, g: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    -g / p + (1.0 - g) / (1.0 - p)
}

/// Stage-2 training loss: classification, localization and patch terms
/// with their unweighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_loc: f64,
    pub l_pat: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Component-wise sum, with `total` recomputed from the parts.
    pub fn add(&self, other: &LossBreakdown) -> LossBreakdown {
        LossBreakdown::from_parts(self.l_cls + other.l_cls, self.l_loc + other.l_loc, self.l_pat + other.l_pat)
    }

    pub fn scaled(&self, f: f64) -> LossBreakdown {
        LossBreakdown::from_parts(self.l_cls * f, self.l_loc * f, self.l_pat * f)
    }

    fn from_parts(l_cls: f64, l_loc: f64, l_pat: f64) -> LossBreakdown {
        LossBreakdown {
            l_cls,
            l_loc,
            l_pat,
            total: l_cls + l_loc + l_pat,
        }
    }
}

/// `L = L_cls + L_loc + L_pat`. Components must be finite and non-negative.
pub fn combined_loss(l_cls: f64, l_loc: f64, l_pat: f64) -> Result<LossBreakdown> {
    for (name, v) in [("l_cls", l_cls), ("l_loc", l_loc), ("l_pat", l_pat)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::invalid(format!("{name} = {v} is not a finite non-negative loss")));
        }
    }
    Ok(LossBreakdown::from_parts(l_cls, l_loc, l_pat))
}
