mod common;

use common::oracles::*;

#[test]
fn deformable_conv_with_zero_offsets_is_conv2d() {
    deform_zero_offsets_is_conv().unwrap();
}

#[test]
fn roi_align_of_constant_map_is_constant() {
    roi_align_constant_map().unwrap();
}

#[test]
fn softmax_is_a_distribution() {
    softmax_sums_to_one().unwrap();
}
