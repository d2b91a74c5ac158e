mod common;

use common::oracles::*;
use defect_forge::geometry::{jaccard, nms, BBox};
use proptest::prelude::*;

#[test]
fn jaccard_matches_pixel_enumeration() {
    jaccard_vs_pixels(1000).unwrap();
}

#[test]
fn nms_matches_quadratic_reference() {
    nms_vs_reference(200).unwrap();
}

#[test]
fn encode_decode_roundtrip() {
    coding_roundtrip(1000).unwrap();
}

#[test]
fn match_equals_exhaustive_search() {
    match_vs_brute_force(1000).unwrap();
}

#[test]
fn nms_of_nothing_is_nothing() {
    assert!(nms(&[], 0.5).is_empty());
}

fn arb_box() -> impl Strategy<Value = BBox> {
    (0.0..50.0f64, 0.0..50.0f64, 0.01..30.0f64, 0.01..30.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

proptest! {
    #[test]
    fn jaccard_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let (ab, ba) = (jaccard(&a, &b), jaccard(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(jaccard(&a, &a), 1.0);
    }

    #[test]
    fn nms_output_has_no_overlapping_pair(boxes in prop::collection::vec((arb_box(), 0.0..1.0f64), 0..30)) {
        let kept = nms(&boxes, 0.5);
        for i in 0..kept.len() {
            for j in i + 1..kept.len() {
                prop_assert!(jaccard(&kept[i].0, &kept[j].0) <= 0.5);
                prop_assert!(kept[i].1 >= kept[j].1);
            }
        }
    }
}
