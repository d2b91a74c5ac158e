use super::{BBox, Ratio};

/// One detection level: a `rows x cols` feature map whose default boxes have
/// side `box_size` (area `box_size²`) in input pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSpec {
    pub rows: usize,
    pub cols: usize,
    pub box_size: f64,
}

/// Where a default box came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DefaultOrigin {
    pub level: usize,
    pub row: usize,
    pub col: usize,
    pub index: usize,
}

/// Default boxes for every cell of every level, one per ratio, in
/// `(level, row, col, ratio)` order and clamped to the input frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultBoxSet {
    pub boxes: Vec<BBox>,
    pub origins: Vec<DefaultOrigin>,
}

impl DefaultBoxSet {
    pub fn generate(frame: (usize, usize), levels: &[LevelSpec], ratios: &[Ratio]) -> Self {
        let (h, w) = (frame.0 as f64, frame.1 as f64);
        let mut boxes = Vec::new();
        let mut origins = Vec::new();
        for (level, spec) in levels.iter().enumerate() {
            let (sy, sx) = (h / spec.rows as f64, w / spec.cols as f64);
            for row in 0..spec.rows {
                for col in 0..spec.cols {
                    let (cx, cy) = ((col as f64 + 0.5) * sx, (row as f64 + 0.5) * sy);
                    for (index, ratio) in ratios.iter().enumerate() {
                        let (bw, bh) = ratio.dims(spec.box_size);
                        boxes.push(BBox::from_center(cx, cy, bw, bh).clip(w, h));
                        origins.push(DefaultOrigin {
                            level,
                            row,
                            col,
                            index,
                        });
                    }
                }
            }
        }
        Self { boxes, origins }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}
