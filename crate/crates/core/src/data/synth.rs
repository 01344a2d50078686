//! Fundus-like synthetic images: a vignetted, textured reddish background with
//! vessels, a bright elliptical disc and a brighter concentric cup. The
//! acquisition shift (intensity scale, gamma, blur, noise, texture style) is
//! applied after rendering the clean scene.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Domain, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::planes::{Image, LabelMap, Planes};
use crate::rng::{self, stream, Rng};

/// Documented ranges: `intensity_scale ∈ [0.2, 2]`, `gamma ∈ [0.2, 5]`,
/// `blur_sigma ∈ [0, 5]`, `noise_std ∈ [0, 0.5]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub intensity_scale: f64,
    pub gamma: f64,
    pub blur_sigma: f64,
    pub noise_std: f64,
    /// Selects the background texture / vessel style of the domain.
    pub texture_seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self::identity()
    }
}

impl ShiftConfig {
    pub fn identity() -> Self {
        ShiftConfig {
            intensity_scale: 1.0,
            gamma: 1.0,
            blur_sigma: 0.0,
            noise_std: 0.0,
            texture_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, lo: f64, hi: f64| {
            if v.is_finite() && (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("shift.{name} = {v} outside [{lo}, {hi}]")))
            }
        };
        check("intensity_scale", self.intensity_scale, 0.2, 2.0)?;
        check("gamma", self.gamma, 0.2, 5.0)?;
        check("blur_sigma", self.blur_sigma, 0.0, 5.0)?;
        check("noise_std", self.noise_std, 0.0, 0.5)
    }
}

/// Per-domain rendering style drawn from `texture_seed`.
#[derive(Debug, Clone)]
struct Style {
    background: [f64; 3],
    texture_cells: usize,
    texture_amp: f64,
    vessels: usize,
    vessel_darkness: f64,
}

impl Style {
    fn from_seed(seed: u64) -> Self {
        let mut r = rng::rng(seed, &[stream::SYNTH, u64::MAX]);
        Style {
            background: [
                0.52 + r.gen_range(-0.04..0.04),
                0.22 + r.gen_range(-0.03..0.03),
                0.10 + r.gen_range(-0.02..0.02),
            ],
            texture_cells: r.gen_range(4..=8),
            texture_amp: r.gen_range(0.05..0.10),
            vessels: r.gen_range(4..=7),
            vessel_darkness: r.gen_range(0.25..0.4),
        }
    }
}

const DISC_COLOR: [f64; 3] = [0.86, 0.56, 0.32];
const CUP_COLOR: [f64; 3] = [0.97, 0.82, 0.60];

/// Deterministic in `(n, resolution, shift, seed)`. Records are named
/// `s0000`, `s0001`, … and tagged as source-domain training data; use the
/// manifest builder methods to relabel.
pub fn generate_synthetic(
    n: usize,
    resolution: (usize, usize),
    shift: &ShiftConfig,
    seed: u64,
) -> Result<DatasetManifest> {
    let (h, w) = resolution;
    if n == 0 {
        return Err(Error::config("synthetic dataset needs n >= 1"));
    }
    if h < 32 || w < 32 {
        return Err(Error::config(format!("resolution {h}x{w} below the 32x32 minimum")));
    }
    shift.validate()?;
    let style = Style::from_seed(shift.texture_seed);
    let records = (0..n)
        .map(|i| {
            let mut r = rng::rng(seed, &[stream::SYNTH, i as u64]);
            let (clean, gt) = render(h, w, &style, &mut r);
            let image = apply_shift(clean, shift, &mut r);
            SampleRecord {
                id: format!("s{i:04}"),
                image,
                gt: Some(gt),
                domain: Domain::Source,
            }
        })
        .collect();
    DatasetManifest::new("synthetic", Split::Train, records)
}

fn render(h: usize, w: usize, style: &Style, r: &mut Rng) -> (Image, LabelMap) {
    let m = h.min(w) as f64;
    let cy = h as f64 * r.gen_range(0.38..0.62);
    let cx = w as f64 * r.gen_range(0.38..0.62);
    let radius = m * r.gen_range(0.20..0.28);
    let ecc = r.gen_range(-0.12..0.12);
    let (ra, rb) = (radius * (1.0 + ecc), radius * (1.0 - ecc));
    let theta = r.gen_range(0.0..PI);
    let (st, ct) = theta.sin_cos();
    let cup_scale = r.gen_range(0.45..0.7);
    let brightness = r.gen_range(0.94..1.06);

    // low-frequency texture on a coarse lattice, bilinearly interpolated
    let cells = style.texture_cells;
    let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| r.gen_range(-1.0..1.0)).collect();
    let texture = |y: f64, x: f64| {
        let gy = (y / h as f64 * cells as f64).min(cells as f64 - 1e-9);
        let gx = (x / w as f64 * cells as f64).min(cells as f64 - 1e-9);
        let (iy, ix) = (gy.floor() as usize, gx.floor() as usize);
        let (fy, fx) = (gy - iy as f64, gx - ix as f64);
        let at = |a: usize, b: usize| lattice[a * (cells + 1) + b];
        let top = at(iy, ix) * (1.0 - fx) + at(iy, ix + 1) * fx;
        let bot = at(iy + 1, ix) * (1.0 - fx) + at(iy + 1, ix + 1) * fx;
        top * (1.0 - fy) + bot * fy
    };

    // vessels: gently curved polylines radiating from the disc centre
    let vessels: Vec<(f64, f64, f64, f64)> = (0..style.vessels)
        .map(|_| {
            let angle = r.gen_range(0.0..2.0 * PI);
            let bend = r.gen_range(-0.6..0.6);
            let width = m * r.gen_range(0.008..0.018);
            (angle, bend, width, r.gen_range(0.6..1.0))
        })
        .collect();
    let vessel_shade = |y: f64, x: f64| {
        let (dy, dx) = (y - cy, x - cx);
        let dist = (dy * dy + dx * dx).sqrt();
        let mut shade = 1.0;
        for &(angle, bend, width, strength) in &vessels {
            let a = angle + bend * dist / m;
            // perpendicular distance to the ray through the centre at angle `a`
            let along = dx * a.cos() + dy * a.sin();
            if along < 0.0 {
                continue;
            }
            let perp = -dx * a.sin() + dy * a.cos();
            let d2 = perp * perp / (width * width);
            shade *= 1.0 - style.vessel_darkness * strength * (-0.5 * d2).exp();
        }
        shade
    };

    let mut image: Image = Planes::zeros(3, h, w);
    let mut gt: LabelMap = Planes::zeros(2, h, w);
    let area = h * w;
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let (dy, dx) = (py - cy, px - cx);
            let u = dx * ct + dy * st;
            let v = -dx * st + dy * ct;
            let rho = ((u / ra).powi(2) + (v / rb).powi(2)).sqrt();
            let idx = y * w + x;
            if rho < 1.0 {
                gt.data[idx] = 1;
            }
            if rho < cup_scale {
                gt.data[area + idx] = 1;
            }

            let ry = (py / h as f64 - 0.5) * 2.0;
            let rx = (px / w as f64 - 0.5) * 2.0;
            let vignette = 1.0 - 0.35 * (ry * ry + rx * rx);
            let tex = 1.0 + style.texture_amp * texture(py, px);
            let soft = 0.06;
            let a_disc = 1.0 / (1.0 + ((rho - 1.0) / soft).exp());
            let a_cup = 1.0 / (1.0 + ((rho - cup_scale) / (soft * cup_scale)).exp());
            let shade = vessel_shade(py, px);
            for c in 0..3 {
                let bg = style.background[c] * vignette * tex;
                let mut val = bg * (1.0 - a_disc) + DISC_COLOR[c] * a_disc;
                val = val * (1.0 - a_cup) + CUP_COLOR[c] * a_cup;
                image.data[c * area + idx] = (val * shade * brightness).clamp(0.0, 1.0) as f32;
            }
        }
    }
    (image, gt)
}

fn apply_shift(mut image: Image, shift: &ShiftConfig, r: &mut Rng) -> Image {
    if shift.intensity_scale != 1.0 || shift.gamma != 1.0 {
        for v in &mut image.data {
            let scaled = (*v as f64 * shift.intensity_scale).clamp(0.0, 1.0);
            *v = scaled.powf(shift.gamma) as f32;
        }
    }
    if shift.blur_sigma > 0.0 {
        image = gaussian_blur(&image, shift.blur_sigma);
    }
    if shift.noise_std > 0.0 {
        let normal = Normal::new(0.0, shift.noise_std).expect("validated std");
        for v in &mut image.data {
            *v = (*v as f64 + normal.sample(r)).clamp(0.0, 1.0) as f32;
        }
    }
    image
}

/// Separable Gaussian blur with edge clamping.
pub(crate) fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w) = (image.height as isize, image.width as isize);
    let mut tmp = image.clone();
    let mut out = image.clone();
    for c in 0..image.channels {
        let src = image.plane(c);
        let t = tmp.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let sx = (x + k as isize - radius).clamp(0, w - 1);
                    acc += kv * src[(y * w + sx) as usize] as f64;
                }
                t[(y * w + x) as usize] = acc as f32;
            }
        }
        let t = tmp.plane(c);
        let o = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let sy = (y + k as isize - radius).clamp(0, h - 1);
                    acc += kv * t[(sy * w + x) as usize] as f64;
                }
                o[(y * w + x) as usize] = (acc as f32).clamp(0.0, 1.0);
            }
        }
    }
    out
}
