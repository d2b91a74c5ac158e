use super::BBox;
use crate::error::{Error, Result};

/// Center/log-size regression target of `gt` relative to `anchor`:
/// `((cx_g - cx_a) / w_a, (cy_g - cy_a) / h_a, ln(w_g / w_a), ln(h_g / h_a))`.
pub fn encode_offsets(gt: &BBox, anchor: &BBox) -> Result<[f64; 4]> {
    if !(anchor.width() > 0.0 && anchor.height() > 0.0) {
        return Err(Error::invalid(format!("anchor {anchor:?} has non-positive size")));
    }
    if !(gt.width() > 0.0 && gt.height() > 0.0) {
        return Err(Error::invalid(format!("box {gt:?} has non-positive size")));
    }
    let (gx, gy) = gt.center();
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    Ok([
        (gx - ax) / aw,
        (gy - ay) / ah,
        (gt.width() / aw).ln(),
        (gt.height() / ah).ln(),
    ])
}

/// Inverse of [`encode_offsets`]. Log-size terms are capped so a wild
/// prediction cannot overflow.
pub fn decode_offsets(offsets: &[f64; 4], anchor: &BBox) -> BBox {
    const MAX_LOG: f64 = 8.0;
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = ax + offsets[0] * aw;
    let cy = ay + offsets[1] * ah;
    let w = aw * offsets[2].min(MAX_LOG).exp();
    let h = ah * offsets[3].min(MAX_LOG).exp();
    BBox::from_center(cx, cy, w, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_encodes_to_zero() {
        let a = BBox::new(3.0, 4.0, 13.0, 24.0);
        assert_eq!(encode_offsets(&a, &a).unwrap(), [0.0; 4]);
    }

    #[test]
    fn doubled_width() {
        let a = BBox::new(10.0, 10.0, 20.0, 20.0);
        let g = BBox::new(5.0, 10.0, 25.0, 20.0);
        let t = encode_offsets(&g, &a).unwrap();
        assert_eq!(t[0], 0.0);
        assert_eq!(t[1], 0.0);
        assert!((t[2] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(t[3], 0.0);
    }

    #[test]
    fn degenerate_boxes_are_rejected() {
        let a = BBox::new(0.0, 0.0, 4.0, 4.0);
        assert!(encode_offsets(&BBox::new(1.0, 1.0, 1.0, 3.0), &a).is_err());
        assert!(encode_offsets(&a, &BBox::new(1.0, 1.0, 2.0, 1.0)).is_err());
    }
}
