//! Denoised patch mixing and the mask-normalized BCE objectives.
//!
//! A rectangular region `M` of one (image, pseudo-label, mask) triple is
//! pasted into another; the student is trained on the mixed image with BCE
//! restricted to the mixed mask. Teacher supervision is always computed on
//! the clean images, the photometric strong augmentation is applied to the
//! student's inputs before mixing.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{strong_augment, AugmentConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{to_real, SegModel};
use crate::nn::Real;
use crate::planes::{Image, LabelMap, Mask, Planes, ProbMap};
use crate::pseudolabel::{generate_supervision, PseudoLabelConfig, Supervision};
use crate::rng::{self, stream};

/// Probability clamp used inside the log terms.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn to_mask(self, h: usize, w: usize) -> Mask {
        let mut m: Mask = Planes::zeros(1, h, w);
        for y in self.top..self.top + self.height {
            m.data[y * w + self.left..y * w + self.left + self.width].fill(1);
        }
        m
    }
}

/// Which subset donates the pasted patch in inter-domain mixing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterDirection {
    #[default]
    ReliableIntoUnreliable,
    UnreliableIntoReliable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    /// Area fraction of the pasted rectangle, drawn uniformly.
    pub ratio_range: (f64, f64),
    pub augment: AugmentConfig,
    pub inter_direction: InterDirection,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            ratio_range: (0.25, 0.5),
            augment: AugmentConfig::default(),
            inter_direction: InterDirection::default(),
        }
    }
}

/// Axis-aligned rectangle covering a `Uniform[lo, hi]` fraction of the image
/// (side lengths scale with `√u`), uniformly placed.
pub fn sample_region(h: usize, w: usize, ratio_range: (f64, f64), seed: u64) -> Result<Region> {
    let (lo, hi) = ratio_range;
    if h == 0 || w == 0 {
        return Err(Error::contract(format!("degenerate region canvas {h}x{w}")));
    }
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::config(format!("mix ratio range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1")));
    }
    let mut r = rng::rng(seed, &[stream::REGION]);
    let u = if hi > lo { r.gen_range(lo..=hi) } else { lo };
    let side = u.sqrt();
    let rh = ((h as f64 * side).round() as usize).clamp(1, h);
    let rw = ((w as f64 * side).round() as usize).clamp(1, w);
    Ok(Region {
        top: r.gen_range(0..=h - rh),
        left: r.gen_range(0..=w - rw),
        height: rh,
        width: rw,
    })
}

/// One mixing input: an image with its pseudo-label and denoise mask.
#[derive(Debug, Clone, Copy)]
pub struct MixInput<'a> {
    pub image: &'a Image,
    pub yhat: &'a LabelMap,
    pub m: &'a LabelMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixTriple {
    pub image: Image,
    pub yhat: LabelMap,
    pub m: LabelMap,
    pub region: Mask,
}

fn select<T: Copy>(region: &Mask, a: &Planes<T>, b: &Planes<T>) -> Result<Planes<T>> {
    a.ensure_dims(b)?;
    if !region.same_spatial(a) || region.channels != 1 {
        return Err(Error::shape(format!("1x{}x{} region", a.height, a.width), format!("{:?}", region.dims())));
    }
    let area = a.area();
    let mut data = Vec::with_capacity(a.data.len());
    for c in 0..a.channels {
        let (pa, pb) = (a.plane(c), b.plane(c));
        data.extend((0..area).map(|v| if region.data[v] != 0 { pa[v] } else { pb[v] }));
    }
    Planes::from_vec(a.channels, a.height, a.width, data)
}

/// `x̃ = M⊙x₁ + (1−M)⊙x₂`, likewise for labels and masks, with `M` broadcast
/// over channels.
pub fn mix(a: MixInput<'_>, b: MixInput<'_>, region: &Mask) -> Result<MixTriple> {
    if !region.is_binary() {
        return Err(Error::contract("mixing region must be binary"));
    }
    Ok(MixTriple {
        image: select(region, a.image, b.image)?,
        yhat: select(region, a.yhat, b.yhat)?,
        m: select(region, a.m, b.m)?,
        region: region.clone(),
    })
}

impl MixTriple {
    /// Writes `<dir>/<name>.png`: a strip of the mixed image, the region and
    /// per channel the mixed pseudo-label and mask.
    pub fn dump(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (h, w) = (self.image.height, self.image.width);
        let tiles = 2 + 2 * self.yhat.channels;
        let mut canvas = RgbImage::new((w * tiles) as u32, h as u32);
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let mut tile = |t: usize, px: &dyn Fn(usize) -> [u8; 3]| {
            for y in 0..h {
                for x in 0..w {
                    canvas.put_pixel((t * w + x) as u32, y as u32, Rgb(px(y * w + x)));
                }
            }
        };
        let area = h * w;
        let ch = |c: usize, v: usize| self.image.data[c.min(self.image.channels - 1) * area + v];
        tile(0, &|v| [q(ch(0, v)), q(ch(1, v)), q(ch(2, v))]);
        tile(1, &|v| [self.region.data[v] * 255; 3]);
        for c in 0..self.yhat.channels {
            tile(2 + 2 * c, &|v| [self.yhat.data[c * area + v] * 255; 3]);
            tile(3 + 2 * c, &|v| [self.m.data[c * area + v] * 255; 3]);
        }
        let path = dir.join(format!("{name}.png"));
        canvas.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
        Ok(path)
    }
}

#[inline]
fn bce_term(p: f64, y: u8) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if y != 0 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `Σ m·ℓ(p, y) / Σ m`, or 0 when the mask is empty. Pixels with `m = 0`
/// are never read.
pub fn masked_bce(p: &ProbMap, y: &LabelMap, m: &LabelMap) -> Result<f64> {
    p.ensure_dims(y)?;
    p.ensure_dims(m)?;
    Ok(masked_bce_grad(&p.data, &y.data, &m.data).0)
}

/// Loss and `dL/dp` of [`masked_bce`] over flat arrays.
pub fn masked_bce_grad<T: Real>(p: &[T], y: &[u8], m: &[u8]) -> (f64, Vec<T>) {
    let count = m.iter().filter(|&&v| v != 0).count();
    let mut grad = vec![T::ZERO; p.len()];
    if count == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / count as f64;
    let mut total = 0.0;
    for v in 0..p.len() {
        if m[v] == 0 {
            continue;
        }
        let pv = p[v].to_f64();
        total += bce_term(pv, y[v]);
        if (BCE_EPS..=1.0 - BCE_EPS).contains(&pv) {
            let d = if y[v] != 0 { -1.0 / pv } else { 1.0 / (1.0 - pv) };
            grad[v] = T::from_f64(d * inv);
        }
    }
    (total * inv, grad)
}

/// Seeds for one mixed pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPlan {
    /// Donor of the pasted region (`x₁`).
    pub first: usize,
    /// Receiving image (`x₂`).
    pub second: usize,
    pub augment_first: u64,
    pub augment_second: u64,
    pub region: u64,
    pub dropout: u64,
}

impl PairPlan {
    fn new(seed: u64, index: usize, first: usize, second: usize) -> Self {
        let s = |k: u64| rng::derive(seed, &[stream::PAIRING, index as u64, k]);
        PairPlan {
            first,
            second,
            augment_first: s(0),
            augment_second: s(1),
            region: s(2),
            dropout: s(3),
        }
    }
}

/// Seed for the teacher's MC passes over batch item `index`.
pub fn supervision_seed(seed: u64, index: usize) -> u64 {
    rng::derive(seed, &[stream::MC, index as u64])
}

/// Every item mixed with a distinct partner via a random cyclic derangement
/// (`n ≥ 2`); a single item is paired with itself.
pub fn plan_intra(n: usize, seed: u64) -> Vec<PairPlan> {
    if n == 1 {
        return vec![PairPlan::new(seed, 0, 0, 0)];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(seed, &[stream::SHUFFLE]));
    (0..n)
        .map(|i| PairPlan::new(seed, i, order[i], order[(i + 1) % n]))
        .collect()
}

/// Shuffled reliable and unreliable items zipped together; the shorter side
/// cycles so every item of the longer side is used. `first` indexes the
/// reliable batch and `second` the unreliable one.
pub fn plan_inter(n_reliable: usize, n_unreliable: usize, seed: u64) -> Vec<PairPlan> {
    let mut r: Vec<usize> = (0..n_reliable).collect();
    let mut u: Vec<usize> = (0..n_unreliable).collect();
    let mut g = rng::rng(seed, &[stream::SHUFFLE]);
    r.shuffle(&mut g);
    u.shuffle(&mut g);
    let n = n_reliable.max(n_unreliable);
    (0..n)
        .map(|i| PairPlan::new(seed, i, r[i % n_reliable], u[i % n_unreliable]))
        .collect()
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Mean loss over training examples.
    pub loss: f64,
    /// Mean parameter gradient.
    pub grad: Vec<f32>,
    /// Total loss-bearing pixels across the step.
    pub masked_pixels: usize,
}

/// Teacher supervision for every image of a batch.
pub fn supervise_batch(
    teacher: &SegModel,
    images: &[&Image],
    cfg: &PseudoLabelConfig,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Supervision>> {
    exec.map(images, |i, img| generate_supervision(teacher, img, cfg, supervision_seed(seed, i)))
        .into_iter()
        .collect()
}

/// Builds the mixed training example of one pair.
pub fn build_pair(a: (&Image, &Supervision), b: (&Image, &Supervision), plan: &PairPlan, cfg: &MixConfig) -> Result<MixTriple> {
    let xa = strong_augment(a.0, &cfg.augment, plan.augment_first);
    let xb = strong_augment(b.0, &cfg.augment, plan.augment_second);
    let region = sample_region(xa.height, xa.width, cfg.ratio_range, plan.region)?.to_mask(xa.height, xa.width);
    mix(
        MixInput { image: &xa, yhat: &a.1.yhat, m: &a.1.m },
        MixInput { image: &xb, yhat: &b.1.yhat, m: &b.1.m },
        &region,
    )
}

/// Student loss and gradient on one training example.
pub fn student_loss(
    student: &SegModel,
    image: &Image,
    yhat: &LabelMap,
    m: &LabelMap,
    dropout_seed: u64,
) -> Result<(f64, Vec<f32>, usize)> {
    let (h, w) = (image.height, image.width);
    student.check_input(image.channels, h, w)?;
    let mut r = rng::rng(dropout_seed, &[stream::DROPOUT]);
    let trace = student.forward_trace(&to_real::<f32>(image), h, w, Some(&mut r))?;
    if trace.probs.len() != yhat.data.len() {
        return Err(Error::shape(trace.probs.len(), yhat.data.len()));
    }
    let (loss, dp) = masked_bce_grad(&trace.probs, &yhat.data, &m.data);
    let masked = m.count_ones();
    let grad = if masked == 0 {
        vec![0.0; student.n_params()]
    } else {
        student.backward(&trace, &dp)
    };
    Ok((loss, grad, masked))
}

fn reduce(parts: Vec<Result<(f64, Vec<f32>, usize)>>, n_params: usize) -> Result<StepOutput> {
    let n = parts.len().max(1) as f64;
    let mut out = StepOutput {
        loss: 0.0,
        grad: vec![0.0; n_params],
        masked_pixels: 0,
    };
    for part in parts {
        let (loss, grad, masked) = part?;
        out.loss += loss;
        out.masked_pixels += masked;
        for (g, v) in out.grad.iter_mut().zip(grad) {
            *g += v;
        }
    }
    out.loss /= n;
    let inv = (1.0 / n) as f32;
    out.grad.iter_mut().for_each(|g| *g *= inv);
    Ok(out)
}

fn pair_step(
    student: &SegModel,
    plans: &[PairPlan],
    first: (&[&Image], &[Supervision]),
    second: (&[&Image], &[Supervision]),
    cfg: &MixConfig,
    exec: Execution,
) -> Result<StepOutput> {
    let parts = exec.map(plans, |_, plan| {
        let t = build_pair(
            (first.0[plan.first], &first.1[plan.first]),
            (second.0[plan.second], &second.1[plan.second]),
            plan,
            cfg,
        )?;
        student_loss(student, &t.image, &t.yhat, &t.m, plan.dropout)
    });
    reduce(parts, student.n_params())
}

/// Intra-domain alignment: pairs within one (reliable) batch.
pub fn intra_step(
    batch: &[&Image],
    student: &SegModel,
    teacher: &SegModel,
    pl: &PseudoLabelConfig,
    cfg: &MixConfig,
    seed: u64,
    exec: Execution,
) -> Result<StepOutput> {
    if batch.is_empty() {
        return Err(Error::contract("intra-domain loss on an empty batch"));
    }
    let sup = supervise_batch(teacher, batch, pl, seed, exec)?;
    let plans = plan_intra(batch.len(), seed);
    pair_step(student, &plans, (batch, &sup), (batch, &sup), cfg, exec)
}

/// Inter-domain alignment: reliable × unreliable pairs. By default the
/// reliable patch is pasted into the unreliable image.
#[allow(clippy::too_many_arguments)]
pub fn inter_step(
    reliable: &[&Image],
    unreliable: &[&Image],
    student: &SegModel,
    teacher: &SegModel,
    pl: &PseudoLabelConfig,
    cfg: &MixConfig,
    seed: u64,
    exec: Execution,
) -> Result<StepOutput> {
    if reliable.is_empty() || unreliable.is_empty() {
        return Err(Error::contract("inter-domain loss needs non-empty reliable and unreliable batches"));
    }
    let sup_r = supervise_batch(teacher, reliable, pl, rng::derive(seed, &[0]), exec)?;
    let sup_u = supervise_batch(teacher, unreliable, pl, rng::derive(seed, &[1]), exec)?;
    let plans = plan_inter(reliable.len(), unreliable.len(), seed);
    match cfg.inter_direction {
        InterDirection::ReliableIntoUnreliable => {
            pair_step(student, &plans, (reliable, &sup_r), (unreliable, &sup_u), cfg, exec)
        }
        InterDirection::UnreliableIntoReliable => {
            let flipped: Vec<PairPlan> = plans
                .iter()
                .map(|p| PairPlan { first: p.second, second: p.first, ..*p })
                .collect();
            pair_step(student, &flipped, (unreliable, &sup_u), (reliable, &sup_r), cfg, exec)
        }
    }
}

/// Denoised self-training without mixing: each strongly augmented image is
/// supervised by its own teacher pseudo-label and mask.
pub fn plain_step(
    batch: &[&Image],
    student: &SegModel,
    teacher: &SegModel,
    pl: &PseudoLabelConfig,
    cfg: &MixConfig,
    seed: u64,
    exec: Execution,
) -> Result<StepOutput> {
    if batch.is_empty() {
        return Err(Error::contract("self-training step on an empty batch"));
    }
    let sup = supervise_batch(teacher, batch, pl, seed, exec)?;
    let plans: Vec<PairPlan> = (0..batch.len()).map(|i| PairPlan::new(seed, i, i, i)).collect();
    let parts = exec.map(&plans, |_, plan| {
        let x = strong_augment(batch[plan.first], &cfg.augment, plan.augment_first);
        let s = &sup[plan.first];
        student_loss(student, &x, &s.yhat, &s.m, plan.dropout)
    });
    reduce(parts, student.n_params())
}

pub fn intra_loss(
    batch: &[&Image],
    student: &SegModel,
    teacher: &SegModel,
    pl: &PseudoLabelConfig,
    cfg: &MixConfig,
    seed: u64,
) -> Result<f64> {
    Ok(intra_step(batch, student, teacher, pl, cfg, seed, Execution::default())?.loss)
}

#[allow(clippy::too_many_arguments)]
pub fn inter_loss(
    reliable: &[&Image],
    unreliable: &[&Image],
    student: &SegModel,
    teacher: &SegModel,
    pl: &PseudoLabelConfig,
    cfg: &MixConfig,
    seed: u64,
) -> Result<f64> {
    Ok(inter_step(reliable, unreliable, student, teacher, pl, cfg, seed, Execution::default())?.loss)
}
