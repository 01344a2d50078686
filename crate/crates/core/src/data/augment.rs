use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::planes::Image;
use crate::rng::{self, stream};

/// Photometric-only strong augmentation. Spatial layout is never changed, so
/// pseudo-labels stay pixel-aligned with the augmented view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Contrast factor drawn uniformly from this range, applied about the
    /// image mean.
    pub contrast: (f64, f64),
    pub erase_prob: f64,
    /// Erased rectangle area as a fraction of the image.
    pub erase_area: (f64, f64),
    pub erase_value: f32,
    pub noise_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            contrast: (0.7, 1.3),
            erase_prob: 0.5,
            erase_area: (0.02, 0.12),
            erase_value: 0.5,
            noise_std: 0.05,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            contrast: (1.0, 1.0),
            erase_prob: 0.0,
            erase_area: (0.0, 0.0),
            erase_value: 0.5,
            noise_std: 0.0,
        }
    }
}

/// Contrast jitter, then random erasing, then additive Gaussian noise;
/// clamped to `[0, 1]`. Deterministic in `seed`.
pub fn strong_augment(image: &Image, cfg: &AugmentConfig, seed: u64) -> Image {
    let mut r = rng::rng(seed, &[stream::AUGMENT]);
    let mut out = image.clone();
    let (lo, hi) = cfg.contrast;
    let factor = if hi > lo { r.gen_range(lo..=hi) } else { lo };
    if factor != 1.0 {
        let mean = out.mean() as f32;
        let f = factor as f32;
        for v in &mut out.data {
            *v = ((*v - mean) * f + mean).clamp(0.0, 1.0);
        }
    }

    if cfg.erase_prob > 0.0 && r.gen::<f64>() < cfg.erase_prob {
        let (h, w) = (out.height, out.width);
        let (alo, ahi) = cfg.erase_area;
        let frac = if ahi > alo { r.gen_range(alo..=ahi) } else { alo };
        let aspect: f64 = r.gen_range(0.5f64..=2.0).sqrt();
        let eh = ((frac * (h * w) as f64).sqrt() * aspect).round().clamp(1.0, h as f64) as usize;
        let ew = ((frac * (h * w) as f64).sqrt() / aspect).round().clamp(1.0, w as f64) as usize;
        let (eh, ew) = if frac >= 1.0 { (h, w) } else { (eh, ew) };
        let top = r.gen_range(0..=h - eh);
        let left = r.gen_range(0..=w - ew);
        for c in 0..out.channels {
            let plane = out.plane_mut(c);
            for y in top..top + eh {
                plane[y * w + left..y * w + left + ew].fill(cfg.erase_value);
            }
        }
    }

    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).expect("finite noise std");
        for v in &mut out.data {
            *v = (*v as f64 + normal.sample(&mut r)).clamp(0.0, 1.0) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planes::Planes;

    fn ramp() -> Image {
        let data = (0..3 * 8 * 6).map(|i| (i % 17) as f32 / 16.0).collect();
        Planes::from_vec(3, 8, 6, data).unwrap()
    }

    #[test]
    fn zero_strength_is_identity() {
        let img = ramp();
        assert_eq!(strong_augment(&img, &AugmentConfig::none(), 42), img);
    }

    #[test]
    fn deterministic_and_shape_preserving() {
        let img = ramp();
        let cfg = AugmentConfig::default();
        let a = strong_augment(&img, &cfg, 9);
        assert_eq!(a, strong_augment(&img, &cfg, 9));
        assert_eq!(a.dims(), img.dims());
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, strong_augment(&img, &cfg, 10));
    }

    #[test]
    fn full_image_erase_fills_everything() {
        let img = ramp();
        let cfg = AugmentConfig {
            erase_prob: 1.0,
            erase_area: (1.0, 1.0),
            erase_value: 0.25,
            ..AugmentConfig::none()
        };
        for seed in 0..5 {
            let out = strong_augment(&img, &cfg, seed);
            assert!(out.data.iter().all(|&v| v == 0.25));
        }
    }
}
