//! Default-box assignment and the multibox loss with its gradient.

use crate::error::Result;
use crate::geometry::{encode_offsets, match_boxes, BBox};
use crate::loss::{combined_loss, smooth_l1, smooth_l1_grad, LossBreakdown};
use crate::tensor::{log_softmax, softmax};

/// Binding of default boxes to ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchAssignment {
    /// Matched ground-truth index per default box.
    pub matched: Vec<Option<usize>>,
    /// Class per default box (0 = background).
    pub labels: Vec<usize>,
    /// Matched default boxes, ascending.
    pub pos: Vec<usize>,
    /// Background boxes selected for the confidence loss.
    pub neg: Vec<usize>,
}

impl MatchAssignment {
    /// `N = |Pos|`.
    pub fn n(&self) -> usize {
        self.pos.len()
    }

    /// The indicator `x[i][j]`.
    pub fn indicator(&self, i: usize, j: usize) -> bool {
        self.matched[i] == Some(j)
    }
}

/// Match default boxes against `(box, class)` ground truth. `Neg` is left
/// empty; fill it with [`mine_hard_negatives`] once logits are known.
pub fn match_defaults(defaults: &[BBox], gt: &[(BBox, usize)], threshold: f64) -> MatchAssignment {
    let gt_boxes: Vec<BBox> = gt.iter().map(|(b, _)| *b).collect();
    let matched = match_boxes(defaults, &gt_boxes, threshold);
    let labels = matched.iter().map(|m| m.map_or(0, |j| gt[j].1)).collect();
    let pos = matched
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|_| i))
        .collect();
    MatchAssignment {
        matched,
        labels,
        pos,
        neg: Vec::new(),
    }
}

/// Select the unmatched boxes with the highest background loss
/// `-log softmax(c)_0`, at most `ratio * max(N, 1)` of them. Ties keep the
/// lower index. Returns the new `Neg` in ascending order.
pub fn mine_hard_negatives(assign: &mut MatchAssignment, logits: &[Vec<f64>], ratio: f64) {
    let budget = (ratio * assign.n().max(1) as f64).floor() as usize;
    let mut cands: Vec<(usize, f64)> = assign
        .matched
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_none())
        .map(|(i, _)| (i, -log_softmax(&logits[i])[0]))
        .collect();
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut neg: Vec<usize> = cands.into_iter().take(budget).map(|(i, _)| i).collect();
    neg.sort_unstable();
    assign.neg = neg;
}

/// Encoded regression target per default box (zeros when unmatched).
pub fn encode_targets(assign: &MatchAssignment, defaults: &[BBox], gt: &[(BBox, usize)]) -> Result<Vec<[f64; 4]>> {
    assign
        .matched
        .iter()
        .zip(defaults)
        .map(|(m, d)| match m {
            Some(j) => encode_offsets(&gt[*j].0, d),
            None => Ok([0.0; 4]),
        })
        .collect()
}

/// `Σ_{i∈Pos} Σ_m smoothL1(l_i^m - ĝ_i^m)`.
pub fn loc_loss(assign: &MatchAssignment, offsets: &[[f64; 4]], targets: &[[f64; 4]]) -> f64 {
    assign
        .pos
        .iter()
        .map(|&i| (0..4).map(|m| smooth_l1(offsets[i][m] - targets[i][m])).sum::<f64>())
        .sum()
}

/// `-Σ_{i∈Pos} log ĉ_i^{label} - Σ_{i∈Neg} log ĉ_i^0`.
pub fn conf_loss(assign: &MatchAssignment, logits: &[Vec<f64>]) -> f64 {
    let pos: f64 = assign
        .pos
        .iter()
        .map(|&i| -log_softmax(&logits[i])[assign.labels[i]])
        .sum();
    let neg: f64 = assign.neg.iter().map(|&i| -log_softmax(&logits[i])[0]).sum();
    pos + neg
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MultiboxLoss {
    pub l_conf: f64,
    pub l_loc: f64,
    /// `(L_conf + α L_loc) / max(N, 1)`.
    pub total: f64,
    pub n: usize,
}

impl MultiboxLoss {
    /// The multibox loss split into a classification term
    /// `L_conf / max(N, 1)` and a localization term `α L_loc / max(N, 1)`.
    pub fn breakdown(&self, alpha: f64) -> Result<LossBreakdown> {
        let norm = self.n.max(1) as f64;
        combined_loss(self.l_conf / norm, alpha * self.l_loc / norm, 0.0)
    }
}

pub fn multibox_loss(
    assign: &MatchAssignment,
    logits: &[Vec<f64>],
    offsets: &[[f64; 4]],
    targets: &[[f64; 4]],
    alpha: f64,
) -> MultiboxLoss {
    let l_conf = conf_loss(assign, logits);
    let l_loc = loc_loss(assign, offsets, targets);
    let n = assign.n();
    MultiboxLoss {
        l_conf,
        l_loc,
        total: (l_conf + alpha * l_loc) / n.max(1) as f64,
        n,
    }
}

/// Gradient of [`MultiboxLoss::total`] with respect to every logit and
/// offset. Boxes outside `Pos ∪ Neg` get zero gradient.
pub fn multibox_grad(
    assign: &MatchAssignment,
    logits: &[Vec<f64>],
    offsets: &[[f64; 4]],
    targets: &[[f64; 4]],
    alpha: f64,
) -> (Vec<Vec<f64>>, Vec<[f64; 4]>) {
    let inv_n = 1.0 / assign.n().max(1) as f64;
    let mut d_logits: Vec<Vec<f64>> = logits.iter().map(|l| vec![0.0; l.len()]).collect();
    let mut d_offsets = vec![[0.0; 4]; offsets.len()];
    let mut ce = |i: usize, class: usize| {
        let p = softmax(&logits[i]);
        for (k, pk) in p.into_iter().enumerate() {
            d_logits[i][k] += inv_n * (pk - if k == class { 1.0 } else { 0.0 });
        }
    };
    for &i in &assign.pos {
        ce(i, assign.labels[i]);
    }
    for &i in &assign.neg {
        ce(i, 0);
    }
    for &i in &assign.pos {
        for m in 0..4 {
            d_offsets[i][m] = alpha * inv_n * smooth_l1_grad(offsets[i][m] - targets[i][m]);
        }
    }
    (d_logits, d_offsets)
}
