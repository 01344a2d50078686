//! Dataset directories: `images/<id>.png` (8-bit RGB), `masks/<id>_disc.png`,
//! `masks/<id>_cup.png` (0/255) and `manifest.json`.

use std::fs;
use std::path::Path;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetManifest, Domain, SampleRecord, ShiftConfig, Split, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::planes::{Image, LabelMap, Planes};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProvenance {
    pub shift: ShiftConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub split: Split,
    pub domain: Domain,
    pub ids: Vec<String>,
    pub resolution: (usize, usize),
    pub has_masks: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthProvenance>,
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_dataset(
    dir: &Path,
    manifest: &DatasetManifest,
    synthetic: Option<(ShiftConfig, u64)>,
) -> Result<DatasetMeta> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    let (h, w) = manifest.resolution;
    for r in &manifest.records {
        if r.image.channels != 3 {
            return Err(Error::contract("only 3-channel images can be written"));
        }
        let area = h * w;
        let mut buf = Vec::with_capacity(area * 3);
        for i in 0..area {
            for c in 0..3 {
                buf.push(quantize(r.image.data[c * area + i]));
            }
        }
        let img = RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized to image");
        let path = images.join(format!("{}.png", r.id));
        img.save(&path).map_err(image_err(&path))?;
        if let Some(gt) = &r.gt {
            for (c, name) in CLASS_NAMES.iter().enumerate().take(gt.channels) {
                let data = gt.plane(c).iter().map(|&v| v * 255).collect();
                let m = GrayImage::from_raw(w as u32, h as u32, data).expect("buffer sized to mask");
                let path = masks.join(format!("{}_{name}.png", r.id));
                m.save(&path).map_err(image_err(&path))?;
            }
        }
    }
    let meta = DatasetMeta {
        name: manifest.name.clone(),
        split: manifest.split,
        domain: manifest.records[0].domain,
        ids: manifest.ids(),
        resolution: manifest.resolution,
        has_masks: manifest.has_ground_truth(),
        synthetic: synthetic.map(|(shift, seed)| SynthProvenance { shift, seed }),
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
    Ok(meta)
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, DatasetMeta)> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path,
            hint: "generate the dataset first (sfda synth)".into(),
        });
    }
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let meta: DatasetMeta = serde_json::from_slice(&text)?;
    let (h, w) = meta.resolution;
    let mut records = Vec::with_capacity(meta.ids.len());
    for id in &meta.ids {
        let path = dir.join("images").join(format!("{id}.png"));
        let rgb = image::open(&path).map_err(image_err(&path))?.to_rgb8();
        if (rgb.height() as usize, rgb.width() as usize) != (h, w) {
            return Err(Error::shape(format!("{h}x{w}"), format!("{}x{}", rgb.height(), rgb.width())));
        }
        let mut image: Image = Planes::zeros(3, h, w);
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                image.data[c * h * w + i] = px[c] as f32 / 255.0;
            }
        }
        let gt = if meta.has_masks {
            let mut gt: LabelMap = Planes::zeros(CLASS_NAMES.len(), h, w);
            for (c, name) in CLASS_NAMES.iter().enumerate() {
                let path = dir.join("masks").join(format!("{id}_{name}.png"));
                let g = image::open(&path).map_err(image_err(&path))?.to_luma8();
                for (o, &v) in gt.plane_mut(c).iter_mut().zip(g.as_raw()) {
                    *o = (v >= 128) as u8;
                }
            }
            Some(gt)
        } else {
            None
        };
        records.push(SampleRecord {
            id: id.clone(),
            image,
            gt,
            domain: meta.domain,
        });
    }
    let manifest = DatasetManifest::new(meta.name.clone(), meta.split, records)?;
    Ok((manifest, meta))
}

/// SHA-256 over every file of a dataset directory, in sorted path order.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    for sub in ["images", "masks"] {
        let d = dir.join(sub);
        if let Ok(entries) = fs::read_dir(&d) {
            files.extend(entries.flatten().map(|e| e.path()));
        }
    }
    files.push(dir.join(MANIFEST_FILE));
    files.sort();
    let mut hasher = Sha256::new();
    for f in files {
        let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
        hasher.update(f.strip_prefix(dir).unwrap_or(&f).to_string_lossy().as_bytes());
        hasher.update(&bytes);
    }
    Ok(hex(&hasher.finalize()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl DatasetManifest {
    /// SHA-256 over ids, image bits and ground-truth bytes.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for r in &self.records {
            hasher.update(r.id.as_bytes());
            for v in &r.image.data {
                hasher.update(v.to_bits().to_le_bytes());
            }
            if let Some(gt) = &r.gt {
                hasher.update(&gt.data);
            }
        }
        hex(&hasher.finalize())
    }

    /// SHA-256 over ids and ground-truth bytes only.
    pub fn mask_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for r in &self.records {
            hasher.update(r.id.as_bytes());
            if let Some(gt) = &r.gt {
                hasher.update(&gt.data);
            }
        }
        hex(&hasher.finalize())
    }
}
