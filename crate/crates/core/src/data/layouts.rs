//! Directory layouts understood by [`load_dataset`].
//!
//! | layout      | structure                                                          |
//! |-------------|--------------------------------------------------------------------|
//! | `kolektor`  | `root/<part>/<name>.png` with `root/<part>/<name>_label.png`        |
//! | `severstal` | `root/train_images/*.png` plus `root/train.csv` (`ImageId,ClassId,EncodedPixels`) |
//! | `cplid`     | `root/normal/*.png`, `root/defect/*.png`, `root/defect_masks/<name>.png` |
//! | `synthetic` | `root/manifest.json`, `root/images/<id>.png`, `root/masks/<id>.png` |
//!
//! Only the synthetic layout carries a train/test split; records from the
//! other layouts are tagged [`Split::Train`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{read_mask, read_rgb, rle_decode, write_mask, write_rgb, DatasetRecord, Mask, Source, Split, SyntheticSpec};
use crate::error::{Error, Result};

/// Number of defect classes in the Severstal-like layout.
const SEVERSTAL_CLASSES: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Kolektor,
    Severstal,
    Cplid,
    Synthetic,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kolektor" => Ok(Self::Kolektor),
            "severstal" => Ok(Self::Severstal),
            "cplid" => Ok(Self::Cplid),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(Error::invalid(format!(
                "unknown dataset layout '{other}' (expected kolektor, severstal, cplid or synthetic)"
            ))),
        }
    }
}

pub fn load_dataset(root: &Path, layout: Layout) -> Result<Vec<DatasetRecord>> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    match layout {
        Layout::Kolektor => load_kolektor(root),
        Layout::Severstal => load_severstal(root),
        Layout::Cplid => load_cplid(root),
        Layout::Synthetic => load_synthetic(root),
    }
}

/// Sorted entries of `dir` (missing directory reads as empty).
fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn is_png(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn record(id: String, image_path: &Path, mask: Option<Mask>, class_masks: Vec<(u8, Mask)>, source: Source) -> Result<DatasetRecord> {
    let image = read_rgb(image_path)?;
    let mask = mask.unwrap_or_else(|| Mask::zeros(image.width() as usize, image.height() as usize));
    let mut rec = DatasetRecord::new(id, image, mask, class_masks, Split::Train, source)
        .map_err(|e| Error::Dataset(format!("{}: {e}", image_path.display())))?;
    rec.path = Some(image_path.to_path_buf());
    Ok(rec)
}

fn load_kolektor(root: &Path) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for part in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let part_name = part.file_name().unwrap_or_default().to_string_lossy().into_owned();
        for img in sorted_entries(&part)? {
            if !is_png(&img) || stem(&img).ends_with("_label") {
                continue;
            }
            let label = part.join(format!("{}_label.png", stem(&img)));
            if !label.is_file() {
                return Err(Error::MissingMask(img));
            }
            let mask = read_mask(&label)?;
            out.push(record(format!("{part_name}/{}", stem(&img)), &img, Some(mask), Vec::new(), Source::Kolektor)?);
        }
    }
    Ok(out)
}

fn load_severstal(root: &Path) -> Result<Vec<DatasetRecord>> {
    let images = root.join("train_images");
    let csv = root.join("train.csv");
    let mut runs: BTreeMap<String, Vec<(u8, String)>> = BTreeMap::new();
    if csv.is_file() {
        let text = std::fs::read_to_string(&csv)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("ImageId")) {
                continue;
            }
            let mut cols = line.splitn(3, ',');
            let (id, class, enc) = match (cols.next(), cols.next(), cols.next()) {
                (Some(a), Some(b), Some(c)) => (a.trim(), b.trim(), c.trim()),
                _ => {
                    return Err(Error::Dataset(format!(
                        "{}:{}: expected ImageId,ClassId,EncodedPixels",
                        csv.display(),
                        lineno + 1
                    )))
                }
            };
            let class: u8 = class
                .parse()
                .ok()
                .filter(|c| (1..=SEVERSTAL_CLASSES).contains(c))
                .ok_or_else(|| {
                    Error::Dataset(format!(
                        "{}:{}: class id '{class}' outside 1..={SEVERSTAL_CLASSES}",
                        csv.display(),
                        lineno + 1
                    ))
                })?;
            runs.entry(id.to_string()).or_default().push((class, enc.to_string()));
        }
    }
    for id in runs.keys() {
        if !images.join(id).is_file() {
            return Err(Error::Dataset(format!(
                "annotation for missing image {}",
                images.join(id).display()
            )));
        }
    }

    let mut out = Vec::new();
    for img in sorted_entries(&images)?.into_iter().filter(|p| is_png(p)) {
        let name = img.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let raster = read_rgb(&img)?;
        let (w, h) = (raster.width() as usize, raster.height() as usize);
        let mut merged = Mask::zeros(w, h);
        let mut class_masks: Vec<(u8, Mask)> = Vec::new();
        for (class, enc) in runs.get(&name).into_iter().flatten() {
            let m = rle_decode(enc, h, w).map_err(|e| Error::Dataset(format!("{name}: {e}")))?;
            merged.union_with(&m)?;
            match class_masks.iter_mut().find(|(c, _)| c == class) {
                Some((_, existing)) => existing.union_with(&m)?,
                None => class_masks.push((*class, m)),
            }
        }
        class_masks.sort_by_key(|(c, _)| *c);
        let mut rec = DatasetRecord::new(name, raster, merged, class_masks, Split::Train, Source::Severstal)?;
        rec.path = Some(img);
        out.push(rec);
    }
    Ok(out)
}

fn load_cplid(root: &Path) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for img in sorted_entries(&root.join("normal"))?.into_iter().filter(|p| is_png(p)) {
        out.push(record(format!("normal/{}", stem(&img)), &img, None, Vec::new(), Source::Cplid)?);
    }
    let masks = root.join("defect_masks");
    for img in sorted_entries(&root.join("defect"))?.into_iter().filter(|p| is_png(p)) {
        let mask_path = masks.join(img.file_name().unwrap_or_default());
        if !mask_path.is_file() {
            return Err(Error::MissingMask(img));
        }
        let mask = read_mask(&mask_path)?;
        out.push(record(format!("defect/{}", stem(&img)), &img, Some(mask), Vec::new(), Source::Cplid)?);
    }
    Ok(out)
}

/// `manifest.json` of a synthetic dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub spec: SyntheticSpec,
    pub count: usize,
    pub records: Vec<ManifestRecord>,
    pub stats: ManifestStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub image: String,
    pub mask: String,
    pub defect_fraction: f64,
    /// `[x_min, y_min, x_max, y_max]` per connected component.
    pub boxes: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ManifestStats {
    pub train: usize,
    pub test: usize,
    pub defective: usize,
    /// Mean defect-area fraction over defective images (0 when none).
    pub mean_defect_fraction: f64,
    pub min_defect_fraction: f64,
    pub max_defect_fraction: f64,
}

/// Write records under `out` (created if needed) with a manifest.
pub fn write_synthetic_dataset(out: &Path, spec: &SyntheticSpec, records: &[DatasetRecord]) -> Result<SyntheticManifest> {
    std::fs::create_dir_all(out.join("images"))?;
    std::fs::create_dir_all(out.join("masks"))?;
    let mut entries = Vec::with_capacity(records.len());
    let mut stats = ManifestStats::default();
    let mut fractions = Vec::new();
    for r in records {
        let image = format!("images/{}.png", r.id);
        let mask = format!("masks/{}.png", r.id);
        write_rgb(&out.join(&image), &r.image)?;
        write_mask(&out.join(&mask), &r.mask)?;
        match r.split {
            Split::Train => stats.train += 1,
            Split::Test => stats.test += 1,
        }
        if r.is_defective() {
            fractions.push(r.defect_fraction());
        }
        entries.push(ManifestRecord {
            id: r.id.clone(),
            split: r.split,
            image,
            mask,
            defect_fraction: r.defect_fraction(),
            boxes: r.boxes.iter().map(|(b, _)| [b.x_min, b.y_min, b.x_max, b.y_max]).collect(),
        });
    }
    stats.defective = fractions.len();
    if !fractions.is_empty() {
        stats.mean_defect_fraction = fractions.iter().sum::<f64>() / fractions.len() as f64;
        stats.min_defect_fraction = fractions.iter().copied().fold(f64::INFINITY, f64::min);
        stats.max_defect_fraction = fractions.iter().copied().fold(0.0, f64::max);
    }
    let manifest = SyntheticManifest {
        spec: spec.clone(),
        count: records.len(),
        records: entries,
        stats,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn load_synthetic(root: &Path) -> Result<Vec<DatasetRecord>> {
    let path = root.join("manifest.json");
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let manifest: SyntheticManifest = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    manifest
        .records
        .iter()
        .map(|m| {
            let img = root.join(&m.image);
            let mask_path = root.join(&m.mask);
            if !mask_path.is_file() {
                return Err(Error::MissingMask(img));
            }
            let mut rec = record(m.id.clone(), &img, Some(read_mask(&mask_path)?), Vec::new(), Source::Synthetic)?;
            rec.split = m.split;
            Ok(rec)
        })
        .collect()
}
