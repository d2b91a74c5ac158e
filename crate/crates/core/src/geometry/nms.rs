use super::{jaccard, BBox};

/// Indices kept by greedy NMS, in descending score order. Equal scores keep
/// input order.
pub fn nms_indices(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| jaccard(&boxes[i], &boxes[k]) <= iou_threshold)
        {
            kept.push(i);
        }
    }
    kept
}

/// Greedy non-maximum suppression over `(box, score)` pairs.
pub fn nms(boxes: &[(BBox, f64)], iou_threshold: f64) -> Vec<(BBox, f64)> {
    let (b, s): (Vec<BBox>, Vec<f64>) = boxes.iter().copied().unzip();
    nms_indices(&b, &s, iou_threshold)
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}
