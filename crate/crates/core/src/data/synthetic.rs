//! Seeded generator of textured gray images with dark synthetic defects.

use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DatasetRecord, Mask, Source, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Scratch,
    Blob,
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rectangle" => Ok(Self::Rectangle),
            "scratch" => Ok(Self::Scratch),
            "blob" => Ok(Self::Blob),
            other => Err(Error::invalid(format!("unknown defect shape '{other}'"))),
        }
    }
}

/// Parameters of the synthetic dataset.
///
/// Each defective image receives between `min_defects` and `max_defects`
/// shapes whose union covers `area_fraction` of the image (within 15%).
/// `defect_free_fraction` of the images get no defect at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub background_level: f64,
    pub noise_amplitude: f64,
    pub gradient: f64,
    pub min_defects: usize,
    pub max_defects: usize,
    pub defect_free_fraction: f64,
    pub shapes: Vec<ShapeKind>,
    pub area_fraction: f64,
    pub contrast: f64,
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            seed: 7,
            background_level: 0.6,
            noise_amplitude: 0.03,
            gradient: 0.15,
            min_defects: 1,
            max_defects: 2,
            defect_free_fraction: 0.2,
            shapes: vec![ShapeKind::Rectangle, ShapeKind::Scratch, ShapeKind::Blob],
            area_fraction: 0.03,
            contrast: 0.35,
            test_fraction: 0.2,
        }
    }
}

impl SyntheticSpec {
    /// Parse `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key = value, got '{line}'")))?;
            spec.set(key.trim(), value.trim())?;
        }
        Ok(spec)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::ConfigValue {
                key: key.to_string(),
                reason: format!("cannot parse '{value}'"),
            })
        }
        match key {
            "width" => self.width = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "background_level" => self.background_level = num(key, value)?,
            "noise_amplitude" => self.noise_amplitude = num(key, value)?,
            "gradient" => self.gradient = num(key, value)?,
            "min_defects" => self.min_defects = num(key, value)?,
            "max_defects" => self.max_defects = num(key, value)?,
            "defect_free_fraction" => self.defect_free_fraction = num(key, value)?,
            "area_fraction" => self.area_fraction = num(key, value)?,
            "contrast" => self.contrast = num(key, value)?,
            "test_fraction" => self.test_fraction = num(key, value)?,
            "shapes" => {
                self.shapes = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            _ => return Err(Error::UnknownConfigKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::invalid("synthetic images must be at least 8x8"));
        }
        if self.min_defects > self.max_defects {
            return Err(Error::invalid("min_defects exceeds max_defects"));
        }
        if !(0.0..=1.0).contains(&self.defect_free_fraction) || !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(Error::invalid("fractions must lie in [0, 1]"));
        }
        if self.max_defects > 0 {
            if self.shapes.is_empty() {
                return Err(Error::invalid("no defect shapes enabled"));
            }
            if !(self.area_fraction > 0.0 && self.area_fraction <= 0.9) {
                return Err(Error::invalid(format!(
                    "defect area fraction {} is infeasible; it must lie in (0, 0.9]",
                    self.area_fraction
                )));
            }
            let pixels = self.area_fraction * (self.width * self.height) as f64;
            if pixels < 4.0 * self.max_defects as f64 {
                return Err(Error::invalid(format!(
                    "defect area target of {pixels:.1} pixels is too small to draw {} shapes",
                    self.max_defects
                )));
            }
        }
        Ok(())
    }

    pub fn test_count(&self, count: usize) -> usize {
        (self.test_fraction * count as f64).round() as usize
    }
}

/// Generate `count` records. Record `i` depends only on `(spec, i)`; the
/// last `round(test_fraction * count)` records form the test split.
pub fn generate_synthetic(spec: &SyntheticSpec, count: usize) -> Result<Vec<DatasetRecord>> {
    spec.validate()?;
    let n_test = spec.test_count(count);
    (0..count)
        .into_par_iter()
        .map(|i| {
            let split = if i + n_test >= count { Split::Test } else { Split::Train };
            generate_one(spec, i, split)
        })
        .collect()
}

fn generate_one(spec: &SyntheticSpec, index: usize, split: Split) -> Result<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let (w, h) = (spec.width, spec.height);

    let n_defects = if spec.max_defects == 0 || rng.random::<f64>() < spec.defect_free_fraction {
        0
    } else {
        rng.random_range(spec.min_defects.max(1)..=spec.max_defects)
    };
    let mask = if n_defects == 0 {
        Mask::zeros(w, h)
    } else {
        draw_defects(spec, n_defects, &mut rng)?
    };

    let level = spec.background_level + rng.random_range(-0.08..=0.08);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let grad = spec.gradient * rng.random_range(0.5..=1.0);
    let depth = spec.contrast * rng.random_range(0.8..=1.2);
    let diag = ((w * w + h * h) as f64).sqrt();
    let noise = Normal::new(0.0, spec.noise_amplitude.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;

    let mut image = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let ramp = (x as f64 * phi.cos() + y as f64 * phi.sin()) / diag;
            let mut v = level + grad * ramp + noise.sample(&mut rng);
            if mask.get(x, y) {
                v -= depth;
            }
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            image.put_pixel(x as u32, y as u32, Rgb([g, g, g]));
        }
    }
    DatasetRecord::new(format!("syn_{index:05}"), image, mask, Vec::new(), split, Source::Synthetic)
}

/// Draw shapes until the union lands within 15% of the area target,
/// rescaling the per-shape area after each miss.
fn draw_defects(spec: &SyntheticSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Mask> {
    let (w, h) = (spec.width, spec.height);
    let target = spec.area_fraction * (w * h) as f64;
    let mut gain = 1.0;
    for _ in 0..200 {
        let mut mask = Mask::zeros(w, h);
        for _ in 0..n {
            let kind = spec.shapes[rng.random_range(0..spec.shapes.len())];
            paint(&mut mask, kind, gain * target / n as f64, rng);
        }
        let got = mask.count() as f64;
        if (got - target).abs() <= 0.15 * target {
            return Ok(mask);
        }
        gain = (gain * target / got.max(1.0)).clamp(0.05, 20.0);
    }
    Err(Error::invalid(format!(
        "could not place defects covering {:.1}% of a {w}x{h} image",
        100.0 * spec.area_fraction
    )))
}

fn paint(mask: &mut Mask, kind: ShapeKind, area: f64, rng: &mut ChaCha8Rng) {
    let (w, h) = (mask.width as f64, mask.height as f64);
    match kind {
        ShapeKind::Rectangle => {
            let aspect = rng.random_range(-1.1f64..=1.1).exp();
            let rw = (area * aspect).sqrt().clamp(2.0, 0.95 * w);
            let rh = (area / rw).clamp(2.0, 0.95 * h);
            let x0 = rng.random_range(0.0..=w - rw);
            let y0 = rng.random_range(0.0..=h - rh);
            fill(mask, (x0, y0, x0 + rw, y0 + rh), |px, py| {
                px >= x0 && px < x0 + rw && py >= y0 && py < y0 + rh
            });
        }
        ShapeKind::Scratch => {
            let thick = rng.random_range(2.5..=4.5);
            let len = area / thick;
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let bend = theta + rng.random_range(-0.6..=0.6);
            let mut pts = [(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)];
            pts[1] = (theta.cos() * len / 2.0, theta.sin() * len / 2.0);
            pts[2] = (pts[1].0 + bend.cos() * len / 2.0, pts[1].1 + bend.sin() * len / 2.0);
            let (bx0, by0, bx1, by1) = bounds(&pts, thick / 2.0);
            let dx = place(bx0, bx1, w, rng);
            let dy = place(by0, by1, h, rng);
            for p in &mut pts {
                p.0 += dx;
                p.1 += dy;
            }
            let r2 = (thick / 2.0) * (thick / 2.0);
            fill(mask, (bx0 + dx, by0 + dy, bx1 + dx, by1 + dy), |px, py| {
                seg_dist2((px, py), pts[0], pts[1]) <= r2 || seg_dist2((px, py), pts[1], pts[2]) <= r2
            });
        }
        ShapeKind::Blob => {
            let ratio = rng.random_range(-0.7f64..=0.7).exp();
            let a = (area / std::f64::consts::PI * ratio).sqrt();
            let b = (area / std::f64::consts::PI / ratio).sqrt();
            let rot = rng.random_range(0.0..std::f64::consts::PI);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let reach = a.max(b) * 1.15;
            let cx = place(-reach, reach, w, rng);
            let cy = place(-reach, reach, h, rng);
            let (c, s) = (rot.cos(), rot.sin());
            fill(mask, (cx - reach, cy - reach, cx + reach, cy + reach), |px, py| {
                let (u, v) = ((px - cx) * c + (py - cy) * s, -(px - cx) * s + (py - cy) * c);
                let r = (u / a).powi(2) + (v / b).powi(2);
                r <= 1.0 + 0.15 * (3.0 * v.atan2(u) + phase).sin()
            });
        }
    }
}

/// Set every pixel whose center satisfies `inside`, scanning only `bbox`.
fn fill(mask: &mut Mask, bbox: (f64, f64, f64, f64), inside: impl Fn(f64, f64) -> bool) {
    let x0 = bbox.0.floor().max(0.0) as usize;
    let y0 = bbox.1.floor().max(0.0) as usize;
    let x1 = (bbox.2.ceil().max(0.0) as usize).min(mask.width);
    let y1 = (bbox.3.ceil().max(0.0) as usize).min(mask.height);
    for y in y0..y1 {
        for x in x0..x1 {
            if inside(x as f64 + 0.5, y as f64 + 0.5) {
                mask.set(x, y, true);
            }
        }
    }
}

fn bounds(pts: &[(f64, f64)], pad: f64) -> (f64, f64, f64, f64) {
    let mut b = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in pts {
        b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
    }
    (b.0 - pad, b.1 - pad, b.2 + pad, b.3 + pad)
}

/// Random shift putting the extent `[lo, hi]` inside `[0, size]`, or
/// centering it when it does not fit.
fn place(lo: f64, hi: f64, size: f64, rng: &mut ChaCha8Rng) -> f64 {
    let extent = hi - lo;
    if extent >= size {
        (size - extent) / 2.0 - lo
    } else {
        rng.random_range(0.0..=size - extent) - lo
    }
}

fn seg_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    qx * qx + qy * qy
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            width: 64,
            height: 64,
            area_fraction: 0.05,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn zero_defects_give_empty_masks() {
        let spec = SyntheticSpec {
            min_defects: 0,
            max_defects: 0,
            ..small()
        };
        let recs = generate_synthetic(&spec, 5).unwrap();
        assert!(recs.iter().all(|r| r.mask.count() == 0 && r.boxes.is_empty()));
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_synthetic(&small(), 6).unwrap();
        let b = generate_synthetic(&small(), 6).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.as_raw(), y.image.as_raw());
            assert_eq!(x.mask, y.mask);
        }
        let other = generate_synthetic(&SyntheticSpec { seed: 99, ..small() }, 6).unwrap();
        assert!(a.iter().zip(&other).any(|(x, y)| x.image.as_raw() != y.image.as_raw()));
    }

    #[test]
    fn every_defective_image_is_near_target() {
        let spec = small();
        for r in generate_synthetic(&spec, 30).unwrap() {
            if r.is_defective() {
                let f = r.defect_fraction();
                assert!((f - spec.area_fraction).abs() <= 0.2 * spec.area_fraction, "{f}");
            }
        }
    }

    #[test]
    fn infeasible_area_is_rejected() {
        let spec = SyntheticSpec {
            area_fraction: 0.95,
            ..small()
        };
        assert!(generate_synthetic(&spec, 1).is_err());
    }

    #[test]
    fn parse_overrides_defaults() {
        let spec = SyntheticSpec::parse("width = 32\n# comment\nshapes = rectangle, scratch\n").unwrap();
        assert_eq!(spec.width, 32);
        assert_eq!(spec.shapes, vec![ShapeKind::Rectangle, ShapeKind::Scratch]);
        assert!(matches!(SyntheticSpec::parse("colour = 3"), Err(Error::UnknownConfigKey(k)) if k == "colour"));
    }
}
