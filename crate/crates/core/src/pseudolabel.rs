//! Pseudo-labels and prototype-based denoising masks from teacher MC
//! statistics.
//!
//! Each output channel (disc, cup) is treated as its own binary problem:
//! class 0/1 below means background/foreground *of that channel*.

use std::fs;
use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, McPrediction, SegModel};
use crate::planes::{Image, LabelMap, Planes, ProbMap};

/// Weight given to each pixel of the *background* prototype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundWeight {
    /// Foreground probability `p`, the same weight as the foreground prototype.
    #[default]
    ForegroundProb,
    /// `1 − p`.
    Complement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PseudoLabelConfig {
    /// Confidence threshold; `ŷ = 1[p ≥ γ]`.
    pub gamma: f64,
    /// Uncertainty threshold; only pixels with `τ < η` build prototypes.
    pub eta: f64,
    /// Stochastic passes.
    pub k: usize,
    pub background_weight: BackgroundWeight,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        PseudoLabelConfig {
            gamma: 0.75,
            eta: 0.05,
            k: 10,
            background_weight: BackgroundWeight::ForegroundProb,
        }
    }
}

impl PseudoLabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.eta.is_nan() || self.eta <= 0.0 {
            return Err(Error::config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.k < 2 {
            return Err(Error::config(format!("K must be at least 2, got {}", self.k)));
        }
        Ok(())
    }
}

/// Background (`c = 0`) and foreground (`c = 1`) prototypes of one channel;
/// `None` marks an empty support.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Prototypes {
    pub background: Option<Vec<f64>>,
    pub foreground: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Supervision {
    /// Teacher mean probability.
    pub p: ProbMap,
    pub yhat: LabelMap,
    pub tau: ProbMap,
    /// 1 where the pixel participates in the loss.
    pub m: LabelMap,
    pub prototypes: Vec<Prototypes>,
}

pub fn threshold_label(p: &ProbMap, gamma: f64) -> LabelMap {
    p.map(|v| (v as f64 >= gamma) as u8)
}

/// Weighted mean of low-uncertainty features per class.
///
/// `z` is `F × H × W`; `yhat`, `tau` and `p` are single `H × W` planes.
pub fn class_prototypes(
    z: &Planes<f32>,
    yhat: &[u8],
    tau: &[f32],
    p: &[f32],
    eta: f64,
    background_weight: BackgroundWeight,
) -> Result<Prototypes> {
    let area = z.area();
    if yhat.len() != area || tau.len() != area || p.len() != area {
        return Err(Error::shape(area, format!("{}/{}/{}", yhat.len(), tau.len(), p.len())));
    }
    let dim = z.channels;
    let mut sums = [vec![0.0f64; dim], vec![0.0f64; dim]];
    let mut weights = [0.0f64; 2];
    for v in 0..area {
        if (tau[v] as f64) >= eta {
            continue;
        }
        let class = (yhat[v] != 0) as usize;
        let pv = p[v] as f64;
        let weight = match (class, background_weight) {
            (0, BackgroundWeight::Complement) => 1.0 - pv,
            _ => pv,
        };
        if weight == 0.0 {
            continue;
        }
        weights[class] += weight;
        for (c, s) in sums[class].iter_mut().enumerate() {
            *s += z.data[c * area + v] as f64 * weight;
        }
    }
    let finish = |class: usize| {
        (weights[class] > 0.0).then(|| sums[class].iter().map(|s| s / weights[class]).collect())
    };
    Ok(Prototypes {
        background: finish(0),
        foreground: finish(1),
    })
}

/// Euclidean distance of every pixel feature to each prototype; a missing
/// prototype yields `+∞` everywhere.
pub fn proto_distances(z: &Planes<f32>, mu0: Option<&[f64]>, mu1: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
    let area = z.area();
    let dist = |mu: Option<&[f64]>| -> Vec<f64> {
        match mu {
            None => vec![f64::INFINITY; area],
            Some(mu) => (0..area)
                .map(|v| {
                    mu.iter()
                        .enumerate()
                        .map(|(c, &m)| (z.data[c * area + v] as f64 - m).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect(),
        }
    };
    (dist(mu0), dist(mu1))
}

/// Keep a pixel only when its nearest prototype agrees with its label.
/// Ties (including two missing prototypes) are dropped.
pub fn denoise_mask(yhat: &[u8], d0: &[f64], d1: &[f64]) -> Vec<u8> {
    yhat.iter()
        .zip(d0.iter().zip(d1))
        .map(|(&y, (&a, &b))| {
            let keep = if y != 0 { b < a } else { b > a };
            keep as u8
        })
        .collect()
}

/// Pseudo-labels and masks from precomputed teacher statistics.
pub fn supervision_from_stats(mc: &McPrediction, cfg: &PseudoLabelConfig) -> Result<Supervision> {
    let (c, h, w) = mc.mean.dims();
    mc.mean.ensure_dims(&mc.std)?;
    if !mc.pixel_features.same_spatial(&mc.mean) {
        return Err(Error::shape(format!("{h}x{w} features"), format!("{}x{}", mc.pixel_features.height, mc.pixel_features.width)));
    }
    let yhat = threshold_label(&mc.mean, cfg.gamma);
    let mut m: LabelMap = Planes::zeros(c, h, w);
    let mut prototypes = Vec::with_capacity(c);
    for ch in 0..c {
        let protos = class_prototypes(
            &mc.pixel_features,
            yhat.plane(ch),
            mc.std.plane(ch),
            mc.mean.plane(ch),
            cfg.eta,
            cfg.background_weight,
        )?;
        let (d0, d1) = proto_distances(&mc.pixel_features, protos.background.as_deref(), protos.foreground.as_deref());
        m.plane_mut(ch).copy_from_slice(&denoise_mask(yhat.plane(ch), &d0, &d1));
        prototypes.push(protos);
    }
    Ok(Supervision {
        p: mc.mean.clone(),
        yhat,
        tau: mc.std.clone(),
        m,
        prototypes,
    })
}

/// Teacher supervision for an (un-augmented) image.
pub fn generate_supervision(teacher: &SegModel, image: &Image, cfg: &PseudoLabelConfig, seed: u64) -> Result<Supervision> {
    cfg.validate()?;
    let mc = model::mc_forward(teacher, image, cfg.k, seed)?;
    supervision_from_stats(&mc, cfg)
}

#[derive(Serialize)]
struct DumpStats<'a> {
    id: &'a str,
    channels: usize,
    height: usize,
    width: usize,
    p: &'a [f32],
    tau: &'a [f32],
    kept_fraction: Vec<f64>,
    prototypes: &'a [Prototypes],
}

impl Supervision {
    /// Writes `<dir>/<id>/{p,tau,yhat,m}_c<k>.png` plus `maps.json` holding
    /// the float maps and prototypes.
    pub fn dump(&self, dir: &Path, id: &str) -> Result<()> {
        let out = dir.join(id);
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let (c, h, w) = self.p.dims();
        let save = |name: String, data: Vec<u8>| -> Result<()> {
            let path = out.join(name);
            GrayImage::from_raw(w as u32, h as u32, data)
                .expect("plane sized buffer")
                .save(&path)
                .map_err(|source| Error::Image { path, source })
        };
        for ch in 0..c {
            save(format!("p_c{ch}.png"), self.p.plane(ch).iter().map(|v| (v * 255.0).round() as u8).collect())?;
            // τ of a probability never exceeds 0.5
            save(format!("tau_c{ch}.png"), self.tau.plane(ch).iter().map(|v| (v * 510.0).round().min(255.0) as u8).collect())?;
            save(format!("yhat_c{ch}.png"), self.yhat.plane(ch).iter().map(|v| v * 255).collect())?;
            save(format!("m_c{ch}.png"), self.m.plane(ch).iter().map(|v| v * 255).collect())?;
        }
        let stats = DumpStats {
            id,
            channels: c,
            height: h,
            width: w,
            p: &self.p.data,
            tau: &self.tau.data,
            kept_fraction: (0..c)
                .map(|ch| self.m.plane(ch).iter().filter(|&&v| v == 1).count() as f64 / (h * w) as f64)
                .collect(),
            prototypes: &self.prototypes,
        };
        let path = out.join("maps.json");
        fs::write(&path, serde_json::to_vec(&stats)?).map_err(|e| Error::io(&path, e))
    }
}
