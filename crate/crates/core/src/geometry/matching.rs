use super::{jaccard, BBox};

/// Bind default boxes to ground-truth boxes.
///
/// 1. every default box whose best overlap is at least `threshold` takes
///    that ground truth;
/// 2. then each ground truth, in order, claims its highest-overlap default
///    box not already claimed by an earlier ground truth, overriding step 1.
///
/// Ties go to the lowest index. Returns the matched ground-truth index per
/// default box.
pub fn match_boxes(defaults: &[BBox], gts: &[BBox], threshold: f64) -> Vec<Option<usize>> {
    let nd = defaults.len();
    let mut assigned = vec![None; nd];
    if gts.is_empty() || nd == 0 {
        return assigned;
    }
    let ious: Vec<Vec<f64>> = defaults
        .iter()
        .map(|d| gts.iter().map(|g| jaccard(d, g)).collect())
        .collect();

    for (i, row) in ious.iter().enumerate() {
        let (mut best_j, mut best) = (0, row[0]);
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                best_j = j;
            }
        }
        if best >= threshold {
            assigned[i] = Some(best_j);
        }
    }

    let mut claimed = vec![false; nd];
    for j in 0..gts.len() {
        let mut best_i: Option<usize> = None;
        for i in 0..nd {
            if claimed[i] {
                continue;
            }
            if best_i.is_none_or(|b| ious[i][j] > ious[b][j]) {
                best_i = Some(i);
            }
        }
        if let Some(i) = best_i {
            claimed[i] = true;
            assigned[i] = Some(j);
        }
    }
    assigned
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_default_is_matched() {
        let d = [BBox::new(0.0, 0.0, 4.0, 4.0), BBox::new(4.0, 0.0, 8.0, 4.0)];
        let m = match_boxes(&d, &[BBox::new(4.0, 0.0, 8.0, 4.0)], 0.5);
        assert_eq!(m, vec![None, Some(0)]);
    }

    #[test]
    fn low_overlap_still_gets_one_match() {
        let d = [BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(10.0, 0.0, 20.0, 10.0)];
        let m = match_boxes(&d, &[BBox::new(8.0, 4.0, 9.0, 5.0)], 0.5);
        assert_eq!(m.iter().filter(|x| x.is_some()).count(), 1);
        assert_eq!(m[0], Some(0));
    }

    #[test]
    fn two_gts_sharing_a_best_default_both_match() {
        let d = [BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(0.0, 0.0, 20.0, 20.0)];
        let g = [BBox::new(0.0, 0.0, 9.0, 9.0), BBox::new(0.0, 0.0, 9.5, 9.5)];
        let m = match_boxes(&d, &g, 0.9);
        assert_eq!(m, vec![Some(0), Some(1)]);
    }
}
