//! Small U-shaped encoder–decoder with skip connections.
//!
//! Layout for `widths = [w0, …, w(L-1)]`:
//!
//! * encoder level `l`: (2×2 avg-pool when `l > 0`) → conv k×k → ReLU
//! * decoder level `l < L-1`: nearest ×2 upsample of level `l+1` ‖ skip `l`
//!   → conv k×k → ReLU
//! * head: dropout on the level-0 decoder map → 1×1 conv → sigmoid
//!
//! Dropout sits only in front of the head, so the deterministic trunk can be
//! evaluated once and the head re-sampled for Monte-Carlo inference.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::conv::{self, ConvShape};
use super::ops;
use super::Real;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub widths: Vec<usize>,
    pub kernel: usize,
    /// Drop probability applied in front of the head.
    pub dropout: f64,
    /// When set, inputs of any other spatial size are rejected.
    pub resolution: Option<(usize, usize)>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            in_channels: 3,
            out_channels: 2,
            widths: vec![8, 16, 24, 32],
            kernel: 3,
            dropout: 0.1,
            resolution: None,
        }
    }
}

impl NetConfig {
    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config("model.widths must be non-empty and positive"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("model channel counts must be positive"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("model.kernel must be odd"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("model.dropout must lie in [0, 1)"));
        }
        if let Some((h, w)) = self.resolution {
            self.check_spatial(h, w)?;
        }
        Ok(())
    }

    fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        let div = 1usize << (self.levels() - 1);
        if h == 0 || w == 0 || !h.is_multiple_of(div) || !w.is_multiple_of(div) {
            return Err(Error::shape(
                format!("spatial dims divisible by {div}"),
                format!("{h}x{w}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    shape: ConvShape,
    weight: usize,
    bias: usize,
}

impl Layer {
    fn w<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.weight..self.weight + self.shape.weight_len()]
    }

    fn b<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.bias..self.bias + self.shape.cout]
    }
}

#[derive(Debug, Clone)]
pub struct SegNet<T> {
    config: NetConfig,
    enc: Vec<Layer>,
    dec: Vec<Layer>,
    head: Layer,
    infos: Vec<ParamInfo>,
    params: Vec<T>,
}

/// Activations of the deterministic trunk for one image.
#[derive(Debug, Clone)]
pub struct Features<T> {
    pub height: usize,
    pub width: usize,
    enc_in: Vec<Vec<T>>,
    enc_col: Vec<Vec<T>>,
    enc_out: Vec<Vec<T>>,
    dec_in: Vec<Vec<T>>,
    dec_col: Vec<Vec<T>>,
    dec_out: Vec<Vec<T>>,
}

impl<T> Features<T> {
    /// Level-0 decoder map (`widths[0] × H × W`), the per-pixel embedding.
    pub fn pixel_features(&self) -> &[T] {
        self.dec_out.first().unwrap_or_else(|| &self.enc_out[0])
    }

    /// Deepest encoder map.
    pub fn bottleneck(&self) -> &[T] {
        self.enc_out.last().expect("at least one level")
    }
}

/// Everything needed to back-propagate one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub features: Features<T>,
    keep: Option<Vec<T>>,
    head_in: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Real> SegNet<T> {
    /// He-normal weights, zero biases, deterministic in `seed`.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut infos = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            infos.push(ParamInfo {
                name,
                shape,
                offset,
            });
            offset += len;
            offset - len
        };
        let k = config.kernel;
        let mut layer = |name: &str, cin: usize, cout: usize, k: usize| {
            let weight = push(format!("{name}.weight"), vec![cout, cin, k, k]);
            let bias = push(format!("{name}.bias"), vec![cout]);
            Layer {
                shape: ConvShape { cin, cout, k },
                weight,
                bias,
            }
        };
        let w = &config.widths;
        let mut enc = Vec::new();
        for l in 0..w.len() {
            let cin = if l == 0 { config.in_channels } else { w[l - 1] };
            enc.push(layer(&format!("enc{l}"), cin, w[l], k));
        }
        let mut dec = Vec::new();
        for l in 0..w.len() - 1 {
            dec.push(layer(&format!("dec{l}"), w[l + 1] + w[l], w[l], k));
        }
        let head = layer("head", w[0], config.out_channels, 1);

        let mut params = vec![T::ZERO; offset];
        let mut r = rng::rng(seed, &[rng::stream::INIT]);
        for l in enc.iter().chain(&dec).chain(std::iter::once(&head)) {
            let fan_in = l.shape.patch_len() as f64;
            let std = (2.0 / fan_in).sqrt();
            let normal = rand_distr::Normal::new(0.0, std).expect("finite std");
            for p in &mut params[l.weight..l.weight + l.shape.weight_len()] {
                *p = T::from_f64(r.sample(normal));
            }
        }
        Ok(SegNet {
            config,
            enc,
            dec,
            head,
            infos,
            params,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn param_infos(&self) -> &[ParamInfo] {
        &self.infos
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Length of the pooled encoder vector.
    pub fn feature_dim(&self) -> usize {
        *self.config.widths.last().expect("validated")
    }

    /// Channels of the per-pixel embedding.
    pub fn pixel_feature_dim(&self) -> usize {
        self.config.widths[0]
    }

    pub fn set_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape(self.params.len(), values.len()));
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    pub fn check_input(&self, c: usize, h: usize, w: usize) -> Result<()> {
        if c != self.config.in_channels {
            return Err(Error::shape(
                format!("{} input channels", self.config.in_channels),
                format!("{c}"),
            ));
        }
        if let Some((rh, rw)) = self.config.resolution {
            if (rh, rw) != (h, w) {
                return Err(Error::shape(format!("{rh}x{rw}"), format!("{h}x{w}")));
            }
        }
        self.config.check_spatial(h, w)
    }

    /// Runs the trunk. `x` is `in_channels × h × w`. When `keep_cols` is
    /// false the unfolded inputs are discarded (inference only).
    pub fn features(&self, x: &[T], h: usize, w: usize, keep_cols: bool) -> Result<Features<T>> {
        let c = self.config.in_channels;
        if x.len() != c * h * w {
            return Err(Error::shape(c * h * w, x.len()));
        }
        self.check_input(c, h, w)?;
        let widths = &self.config.widths;
        let levels = widths.len();
        let p = &self.params;
        let mut scratch = Vec::new();

        let mut enc_in = Vec::with_capacity(levels);
        let mut enc_col = Vec::with_capacity(levels);
        let mut enc_out: Vec<Vec<T>> = Vec::with_capacity(levels);
        for l in 0..levels {
            let (lh, lw) = (h >> l, w >> l);
            let input = if l == 0 {
                x.to_vec()
            } else {
                ops::avg_pool2(&enc_out[l - 1], widths[l - 1], lh * 2, lw * 2)
            };
            let layer = self.enc[l];
            let mut out = conv::forward(layer.shape, layer.w(p), layer.b(p), &input, lh, lw, &mut scratch);
            ops::relu_inplace(&mut out);
            enc_in.push(input);
            enc_col.push(if keep_cols { std::mem::take(&mut scratch) } else { Vec::new() });
            enc_out.push(out);
        }

        let mut dec_in = vec![Vec::new(); levels - 1];
        let mut dec_col = vec![Vec::new(); levels - 1];
        let mut dec_out = vec![Vec::new(); levels - 1];
        for l in (0..levels.saturating_sub(1)).rev() {
            let (lh, lw) = (h >> l, w >> l);
            let below: &[T] = if l + 1 == levels - 1 {
                &enc_out[l + 1]
            } else {
                &dec_out[l + 1]
            };
            let mut cat = ops::upsample2(below, widths[l + 1], lh / 2, lw / 2);
            cat.extend_from_slice(&enc_out[l]);
            let layer = self.dec[l];
            let mut out = conv::forward(layer.shape, layer.w(p), layer.b(p), &cat, lh, lw, &mut scratch);
            ops::relu_inplace(&mut out);
            dec_in[l] = cat;
            dec_col[l] = if keep_cols { std::mem::take(&mut scratch) } else { Vec::new() };
            dec_out[l] = out;
        }

        Ok(Features {
            height: h,
            width: w,
            enc_in,
            enc_col,
            enc_out,
            dec_in,
            dec_col,
            dec_out,
        })
    }

    /// Draws a dropout keep-mask (already scaled by `1/(1-p)`) for the head
    /// input, or `None` when dropout is disabled.
    pub fn sample_keep(&self, h: usize, w: usize, rng: &mut Rng) -> Option<Vec<T>> {
        let p = self.config.dropout;
        if p <= 0.0 {
            return None;
        }
        let scale = T::from_f64(1.0 / (1.0 - p));
        let n = self.pixel_feature_dim() * h * w;
        Some(
            (0..n)
                .map(|_| if rng.gen::<f64>() < p { T::ZERO } else { scale })
                .collect(),
        )
    }

    /// Head on top of precomputed trunk features. Returns `(head_input, probs)`.
    pub fn head(&self, features: &Features<T>, keep: Option<&[T]>) -> (Vec<T>, Vec<T>) {
        let (h, w) = (features.height, features.width);
        let mut head_in = features.pixel_features().to_vec();
        if let Some(keep) = keep {
            for (v, &k) in head_in.iter_mut().zip(keep) {
                *v *= k;
            }
        }
        let mut none = Vec::new();
        let p = &self.params;
        let mut probs = conv::forward(self.head.shape, self.head.w(p), self.head.b(p), &head_in, h, w, &mut none);
        for v in &mut probs {
            *v = ops::sigmoid(*v);
        }
        (head_in, probs)
    }

    /// Full forward pass retained for back-propagation. Dropout is applied
    /// when `dropout_rng` is given.
    pub fn forward_trace(&self, x: &[T], h: usize, w: usize, dropout_rng: Option<&mut Rng>) -> Result<Trace<T>> {
        let features = self.features(x, h, w, true)?;
        let keep = dropout_rng.and_then(|r| self.sample_keep(h, w, r));
        let (head_in, probs) = self.head(&features, keep.as_deref());
        Ok(Trace {
            features,
            keep,
            head_in,
            probs,
        })
    }

    /// Gradient of a scalar loss w.r.t. all parameters, given `dL/dprobs`.
    pub fn backward(&self, trace: &Trace<T>, dprobs: &[T]) -> Vec<T> {
        let f = &trace.features;
        let (h, w) = (f.height, f.width);
        let widths = &self.config.widths;
        let levels = widths.len();
        let p = &self.params;
        let mut grad = vec![T::ZERO; self.params.len()];

        let dlogit: Vec<T> = dprobs
            .iter()
            .zip(&trace.probs)
            .map(|(&g, &q)| g * q * (T::ONE - q))
            .collect();
        let head = self.head;
        let mut dhead = {
            let (gw, gb) = split_grads(&mut grad, head);
            conv::backward(head.shape, head.w(p), &trace.head_in, &[], h, w, &dlogit, gw, gb, true)
                .expect("input grad requested")
        };
        if let Some(keep) = &trace.keep {
            for (g, &k) in dhead.iter_mut().zip(keep) {
                *g *= k;
            }
        }

        // Gradients w.r.t. each encoder output, filled as skips/upsamples resolve.
        let mut denc: Vec<Vec<T>> = (0..levels)
            .map(|l| vec![T::ZERO; widths[l] * (h >> l) * (w >> l)])
            .collect();
        if levels == 1 {
            denc[0] = dhead;
        } else {
            let mut ddec = dhead;
            for l in 0..levels - 1 {
                let (lh, lw) = (h >> l, w >> l);
                ops::relu_backward(&f.dec_out[l], &mut ddec);
                let layer = self.dec[l];
                let dcat = {
                    let (gw, gb) = split_grads(&mut grad, layer);
                    conv::backward(layer.shape, layer.w(p), &f.dec_in[l], &f.dec_col[l], lh, lw, &ddec, gw, gb, true)
                        .expect("input grad requested")
                };
                let up_len = widths[l + 1] * lh * lw;
                for (d, &g) in denc[l].iter_mut().zip(&dcat[up_len..]) {
                    *d += g;
                }
                let dbelow = ops::upsample2_backward(&dcat[..up_len], widths[l + 1], lh / 2, lw / 2);
                if l + 1 == levels - 1 {
                    for (d, g) in denc[l + 1].iter_mut().zip(dbelow) {
                        *d += g;
                    }
                    break;
                }
                ddec = dbelow;
            }
        }

        for l in (0..levels).rev() {
            let (lh, lw) = (h >> l, w >> l);
            let mut dout = std::mem::take(&mut denc[l]);
            ops::relu_backward(&f.enc_out[l], &mut dout);
            let layer = self.enc[l];
            let (gw, gb) = split_grads(&mut grad, layer);
            let din = conv::backward(layer.shape, layer.w(p), &f.enc_in[l], &f.enc_col[l], lh, lw, &dout, gw, gb, l > 0);
            if let Some(din) = din {
                let dprev = ops::avg_pool2_backward(&din, widths[l - 1], lh * 2, lw * 2);
                for (d, g) in denc[l - 1].iter_mut().zip(dprev) {
                    *d += g;
                }
            }
        }
        grad
    }
}

/// Disjoint mutable views of one layer's weight and bias gradients.
fn split_grads<T>(grad: &mut [T], layer: Layer) -> (&mut [T], &mut [T]) {
    debug_assert_eq!(layer.bias, layer.weight + layer.shape.weight_len());
    let (w, rest) = grad[layer.weight..].split_at_mut(layer.shape.weight_len());
    (w, &mut rest[..layer.shape.cout])
}
