//! Ingestion of real fundus benchmarks from a directory layout.
//!
//! Every layout expects `<root>/images/<stem>.<ext>` plus masks under
//! `<root>/masks/`:
//!
//! * `refuge`: one combined mask `<stem>.png` / `.bmp`, grey levels
//!   0 = cup, 128 = rim, 255 = background. Disc is `v < 192`, cup is `v < 64`.
//! * `rimone`, `drishti`: `<stem>_disc.png` and `<stem>_cup.png`, foreground
//!   where `v >= 128`.
//!
//! Images and masks are center-square cropped (side `min(crop, H, W)`) and
//! resized; masks use nearest-neighbour sampling so they stay binary.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Domain, SampleRecord, Split, CUP, DISC};
use crate::error::{Error, Result};
use crate::planes::{Image, LabelMap, Planes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkLayout {
    Refuge,
    Rimone,
    Drishti,
}

impl std::str::FromStr for BenchmarkLayout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "refuge" => Ok(BenchmarkLayout::Refuge),
            "rimone" | "rim-one" | "rim-one-r3" => Ok(BenchmarkLayout::Rimone),
            "drishti" | "drishti-gs" => Ok(BenchmarkLayout::Drishti),
            other => Err(Error::config(format!("unknown benchmark layout {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadOptions {
    pub split: Split,
    pub domain: Domain,
    /// Fail when any image lacks masks (labelled source training data).
    pub require_masks: bool,
    /// Side of the center square crop before resizing.
    pub crop: u32,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            split: Split::Train,
            domain: Domain::Target,
            require_masks: false,
            crop: 512,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    /// Files that could not be decoded and were skipped.
    pub skipped: usize,
    pub warnings: Vec<String>,
}

const IMAGE_EXTS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

pub fn load_benchmark(
    root: &Path,
    layout: BenchmarkLayout,
    resolution: (usize, usize),
    opts: &LoadOptions,
) -> Result<LoadedDataset> {
    let image_dir = root.join("images");
    let mut stems: Vec<(String, PathBuf)> = match fs::read_dir(&image_dir) {
        Ok(entries) => entries
            .flatten()
            .map(|e| e.path())
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
            .collect(),
        Err(_) => Vec::new(),
    };
    if stems.is_empty() {
        return Err(Error::Ingestion(format!("no images found under {}", image_dir.display())));
    }
    stems.sort();

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut skipped = 0;
    for (stem, path) in stems {
        let image = match image::open(&path) {
            Ok(img) => to_planes(&crop_resize(img, resolution, opts.crop, FilterType::Triangle)),
            Err(e) => {
                skipped += 1;
                warnings.push(format!("skipped unreadable image {}: {e}", path.display()));
                continue;
            }
        };
        let gt = match read_masks(root, &stem, layout, resolution, opts.crop) {
            Ok(gt) => gt,
            Err(e) => {
                skipped += 1;
                warnings.push(format!("skipped {stem}: {e}"));
                continue;
            }
        };
        if gt.is_none() && opts.require_masks {
            return Err(Error::Ingestion(format!(
                "{stem} has no masks but labelled data was required ({layout:?} layout)"
            )));
        }
        records.push(SampleRecord {
            id: stem,
            image,
            gt,
            domain: opts.domain,
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    if records.is_empty() {
        return Err(Error::Ingestion(format!("no readable samples under {}", root.display())));
    }
    let name = root
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("benchmark")
        .to_string();
    Ok(LoadedDataset {
        manifest: DatasetManifest::new(name, opts.split, records)?,
        skipped,
        warnings,
    })
}

fn find_mask(dir: &Path, name: &str) -> Option<PathBuf> {
    ["png", "bmp", "tif", "jpg"]
        .iter()
        .map(|ext| dir.join(format!("{name}.{ext}")))
        .find(|p| p.exists())
}

fn read_gray(path: &Path, resolution: (usize, usize), crop: u32) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(crop_resize(img, resolution, crop, FilterType::Nearest).to_luma8())
}

/// `Ok(None)` when the mask files are absent; `Err` when present but unreadable.
fn read_masks(
    root: &Path,
    stem: &str,
    layout: BenchmarkLayout,
    resolution: (usize, usize),
    crop: u32,
) -> Result<Option<LabelMap>> {
    let dir = root.join("masks");
    let (h, w) = resolution;
    let mut gt: LabelMap = Planes::zeros(2, h, w);
    match layout {
        BenchmarkLayout::Refuge => {
            let Some(path) = find_mask(&dir, stem) else { return Ok(None) };
            let g = read_gray(&path, resolution, crop)?;
            let (disc, cup) = binarize_refuge(g.as_raw());
            gt.plane_mut(DISC).copy_from_slice(&disc);
            gt.plane_mut(CUP).copy_from_slice(&cup);
        }
        BenchmarkLayout::Rimone | BenchmarkLayout::Drishti => {
            let disc = find_mask(&dir, &format!("{stem}_disc"));
            let cup = find_mask(&dir, &format!("{stem}_cup"));
            let (Some(disc), Some(cup)) = (disc, cup) else { return Ok(None) };
            let d = read_gray(&disc, resolution, crop)?;
            let c = read_gray(&cup, resolution, crop)?;
            for (o, &v) in gt.plane_mut(DISC).iter_mut().zip(d.as_raw()) {
                *o = (v >= 128) as u8;
            }
            for (o, &v) in gt.plane_mut(CUP).iter_mut().zip(c.as_raw()) {
                *o = (v >= 128) as u8;
            }
            // annotation noise can leave cup pixels outside the disc
            let (dp, cp) = gt.data.split_at_mut(h * w);
            for (c, &d) in cp.iter_mut().zip(dp.iter()) {
                *c &= d;
            }
        }
    }
    Ok(Some(gt))
}

/// REFUGE grey-level convention: 0 cup, 128 rim, 255 background.
pub(crate) fn binarize_refuge(values: &[u8]) -> (Vec<u8>, Vec<u8>) {
    values
        .iter()
        .map(|&v| ((v < 192) as u8, (v < 64) as u8))
        .unzip()
}

fn crop_resize(img: DynamicImage, (h, w): (usize, usize), crop: u32, filter: FilterType) -> DynamicImage {
    let side = crop.min(img.width()).min(img.height()).max(1);
    let x0 = (img.width() - side) / 2;
    let y0 = (img.height() - side) / 2;
    img.crop_imm(x0, y0, side, side).resize_exact(w as u32, h as u32, filter)
}

fn to_planes(img: &DynamicImage) -> Image {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out: Image = Planes::zeros(3, h, w);
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            out.data[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    out
}
