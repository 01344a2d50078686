//! Segmentation models: deterministic and Monte-Carlo inference, encoder
//! features, teacher–student EMA and checkpoints.
//!
//! The production model is [`SegModel`], an `f32` [`SegNet`]. Randomness
//! only enters through dropout in front of the head, which is what the
//! stochastic (MC) passes sample.

mod checkpoint;
mod teacher;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::nn::{NetConfig, Real, SegNet};
use crate::planes::{Image, Planes, ProbMap};
use crate::rng::{self, stream};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use teacher::{ema_update, TeacherStudentPair};

pub type SegModel = SegNet<f32>;

/// Registered backbones. Only the desk-scale encoder–decoders are built in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backbone {
    /// Four-level U-shaped net, widths 8/16/24/32.
    UnetSmall,
    /// Two-level net for fast tests.
    UnetTiny,
}

impl Backbone {
    pub fn net_config(self, dropout: f64) -> NetConfig {
        let widths = match self {
            Backbone::UnetSmall => vec![8, 16, 24, 32],
            Backbone::UnetTiny => vec![4, 8],
        };
        NetConfig {
            widths,
            dropout,
            ..NetConfig::default()
        }
    }
}

impl std::str::FromStr for Backbone {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unet-small" => Ok(Backbone::UnetSmall),
            "unet-tiny" => Ok(Backbone::UnetTiny),
            other => Err(Error::config(format!(
                "backbone {other:?} is not registered (available: unet-small, unet-tiny)"
            ))),
        }
    }
}

pub(crate) fn to_real<T: Real>(image: &Image) -> Vec<T> {
    image.data.iter().map(|&v| T::from_f32(v)).collect()
}

fn to_planes<T: Real>(c: usize, h: usize, w: usize, data: &[T]) -> Planes<f32> {
    Planes {
        channels: c,
        height: h,
        width: w,
        data: data.iter().map(|v| v.to_f32()).collect(),
    }
}

/// Deterministic (dropout-free) prediction for one image.
pub fn predict<T: Real>(model: &SegNet<T>, image: &Image) -> Result<ProbMap> {
    let (h, w) = (image.height, image.width);
    model.check_input(image.channels, h, w)?;
    let f = model.features(&to_real(image), h, w, false)?;
    let (_, probs) = model.head(&f, None);
    Ok(to_planes(model.config().out_channels, h, w, &probs))
}

/// Deterministic prediction over a batch.
pub fn forward<T: Real>(model: &SegNet<T>, images: &[&Image], exec: Execution) -> Result<Vec<ProbMap>> {
    exec.map(images, |_, img| predict(model, img)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    /// Deepest encoder map (`F × h × w`).
    pub feature_map: Planes<f32>,
    /// Spatial mean of `feature_map`, length `F`.
    pub pooled: Vec<f32>,
}

pub fn encode<T: Real>(model: &SegNet<T>, image: &Image) -> Result<Encoding> {
    let (h, w) = (image.height, image.width);
    model.check_input(image.channels, h, w)?;
    let f = model.features(&to_real(image), h, w, false)?;
    let levels = model.config().levels();
    let (fh, fw) = (h >> (levels - 1), w >> (levels - 1));
    let feature_map = to_planes(model.feature_dim(), fh, fw, f.bottleneck());
    let pooled = (0..feature_map.channels)
        .map(|c| {
            let plane = feature_map.plane(c);
            (plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64) as f32
        })
        .collect();
    Ok(Encoding { feature_map, pooled })
}

/// Per-pixel embedding used for prototypes: the level-0 decoder map, already
/// at input resolution.
pub fn pixel_features<T: Real>(model: &SegNet<T>, image: &Image) -> Result<Planes<f32>> {
    let (h, w) = (image.height, image.width);
    model.check_input(image.channels, h, w)?;
    let f = model.features(&to_real(image), h, w, false)?;
    Ok(to_planes(model.pixel_feature_dim(), h, w, f.pixel_features()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct McPrediction {
    /// Elementwise mean of the `K` stochastic passes.
    pub mean: ProbMap,
    /// Elementwise population standard deviation.
    pub std: ProbMap,
    /// Deterministic per-pixel embedding (dropout is applied after it).
    pub pixel_features: Planes<f32>,
}

/// `K` stochastic forward passes with dropout active; deterministic in `seed`.
pub fn mc_forward<T: Real>(model: &SegNet<T>, image: &Image, k: usize, seed: u64) -> Result<McPrediction> {
    let passes = mc_passes(model, image, k, seed)?;
    let (h, w) = (image.height, image.width);
    let c = model.config().out_channels;
    let f = model.features(&to_real(image), h, w, false)?;
    let (mean, std) = mean_std(&passes);
    Ok(McPrediction {
        mean: to_planes(c, h, w, &mean),
        std: to_planes(c, h, w, &std),
        pixel_features: to_planes(model.pixel_feature_dim(), h, w, f.pixel_features()),
    })
}

/// The raw stochastic passes behind [`mc_forward`] (same seed, same draws).
pub fn mc_passes<T: Real>(model: &SegNet<T>, image: &Image, k: usize, seed: u64) -> Result<Vec<Vec<f32>>> {
    if k < 2 {
        return Err(Error::config(format!("MC inference needs K >= 2, got {k}")));
    }
    let (h, w) = (image.height, image.width);
    model.check_input(image.channels, h, w)?;
    let f = model.features(&to_real(image), h, w, false)?;
    let mut r = rng::rng(seed, &[stream::MC]);
    Ok((0..k)
        .map(|_| {
            let keep = model.sample_keep(h, w, &mut r);
            let (_, probs) = model.head(&f, keep.as_deref());
            probs.iter().map(|v| v.to_f32()).collect()
        })
        .collect())
}

/// Two-pass mean and population std, accumulated in `f64`.
fn mean_std(passes: &[Vec<f32>]) -> (Vec<f64>, Vec<f64>) {
    let k = passes.len() as f64;
    let n = passes[0].len();
    let mut mean = vec![0.0f64; n];
    for p in passes {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut var = vec![0.0f64; n];
    for p in passes {
        for ((s, &v), &m) in var.iter_mut().zip(p).zip(&mean) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    let std = var.into_iter().map(|s| (s / k).sqrt()).collect();
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planes::Planes;

    fn image(seed: u32) -> Image {
        let data = (0..3 * 16 * 16)
            .map(|i| (((i as u32).wrapping_mul(2654435761u32) ^ seed) % 1000) as f32 / 1000.0)
            .collect();
        Planes::from_vec(3, 16, 16, data).unwrap()
    }

    fn tiny(dropout: f64) -> SegModel {
        SegNet::new(Backbone::UnetTiny.net_config(dropout), 3).unwrap()
    }

    #[test]
    fn deterministic_forward_is_repeatable_and_bounded() {
        let m = tiny(0.3);
        let img = image(1);
        let a = predict(&m, &img).unwrap();
        assert_eq!(a, predict(&m, &img).unwrap());
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.dims(), (2, 16, 16));
    }

    #[test]
    fn pooled_is_the_spatial_mean() {
        let m = tiny(0.0);
        let e = encode(&m, &image(2)).unwrap();
        assert_eq!(e.pooled.len(), m.feature_dim());
        for c in 0..e.feature_map.channels {
            let mut acc = 0.0f64;
            for y in 0..e.feature_map.height {
                for x in 0..e.feature_map.width {
                    acc += e.feature_map.get(c, y, x) as f64;
                }
            }
            let mean = acc / e.feature_map.area() as f64;
            assert!((mean as f32 - e.pooled[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn mc_without_dropout_has_zero_spread() {
        let m = tiny(0.0);
        let img = image(3);
        let mc = mc_forward(&m, &img, 10, 1).unwrap();
        assert!(mc.std.data.iter().all(|&s| s == 0.0));
        assert_eq!(mc.mean, predict(&m, &img).unwrap());
    }

    #[test]
    fn mc_requires_two_passes_and_is_seeded() {
        let m = tiny(0.3);
        let img = image(4);
        assert!(matches!(mc_forward(&m, &img, 1, 0), Err(Error::Config(_))));
        let a = mc_forward(&m, &img, 4, 9).unwrap();
        assert_eq!(a, mc_forward(&m, &img, 4, 9).unwrap());
        assert!(a.std.data.iter().any(|&s| s > 0.0));
    }

    #[test]
    fn unknown_backbone_is_a_config_error() {
        assert!("deeplabv3plus-mobilenetv2".parse::<Backbone>().is_err());
        assert_eq!("unet-small".parse::<Backbone>().unwrap(), Backbone::UnetSmall);
    }
}
