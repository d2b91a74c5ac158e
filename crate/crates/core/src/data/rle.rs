//! Run-length text codec for binary masks: space-separated `start length`
//! pairs over column-major pixel order with 1-indexed starts.

use super::Mask;
use crate::error::{Error, Result};

/// Decode an RLE string into a `height x width` mask.
///
/// Starts must be strictly increasing and runs may not overlap or leave the
/// image; anything else is rejected rather than clipped.
pub fn rle_decode(encoding: &str, height: usize, width: usize) -> Result<Mask> {
    let total = height * width;
    let nums: Vec<usize> = encoding
        .split_ascii_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::Rle(format!("`{t}` is not a non-negative integer")))
        })
        .collect::<Result<_>>()?;
    if nums.len() % 2 != 0 {
        return Err(Error::Rle("odd number of values".into()));
    }
    let mut mask = Mask::zeros(width, height);
    let mut next_free = 1usize;
    let mut prev_start = 0usize;
    for pair in nums.chunks_exact(2) {
        let (start, len) = (pair[0], pair[1]);
        if start == 0 {
            return Err(Error::Rle("starts are 1-indexed; got 0".into()));
        }
        if len == 0 {
            return Err(Error::Rle(format!("zero-length run at {start}")));
        }
        if start <= prev_start {
            return Err(Error::Rle(format!("start {start} is not increasing")));
        }
        if start < next_free {
            return Err(Error::Rle(format!("run at {start} overlaps the previous run")));
        }
        let end = start - 1 + len;
        if end > total {
            return Err(Error::Rle(format!(
                "run {start}+{len} exceeds {total} pixels"
            )));
        }
        for idx in start - 1..end {
            mask.set(idx / height, idx % height, true);
        }
        prev_start = start;
        next_free = end + 1;
    }
    Ok(mask)
}

/// Encode a mask as canonical RLE (maximal runs, no trailing space).
pub fn rle_encode(mask: &Mask) -> String {
    let (w, h) = (mask.width, mask.height);
    let mut parts: Vec<String> = Vec::new();
    let mut run_start: Option<usize> = None;
    for idx in 0..w * h {
        let on = mask.get(idx / h, idx % h);
        match (on, run_start) {
            (true, None) => run_start = Some(idx),
            (false, Some(s)) => {
                parts.push(format!("{} {}", s + 1, idx - s));
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        parts.push(format!("{} {}", s + 1, w * h - s));
    }
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_encoding_is_blank() {
        let m = rle_decode("", 3, 5).unwrap();
        assert_eq!(m.count(), 0);
        assert_eq!(rle_encode(&m), "");
    }

    #[test]
    fn first_column() {
        let m = rle_decode("1 4", 4, 2).unwrap();
        for y in 0..4 {
            assert!(m.get(0, y));
            assert!(!m.get(1, y));
        }
        assert_eq!(rle_encode(&m), "1 4");
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        for bad in ["1", "0 2", "3 1 2 1", "1 3 2 2", "8 3", "1 0", "a 1"] {
            assert!(rle_decode(bad, 3, 3).is_err(), "{bad}");
        }
    }

    #[test]
    fn run_crossing_columns() {
        let m = rle_decode("3 3", 3, 2).unwrap();
        assert!(m.get(0, 2) && m.get(1, 0) && m.get(1, 1) && !m.get(1, 2));
    }
}
