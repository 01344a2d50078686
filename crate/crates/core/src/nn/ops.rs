//! Elementwise and resampling layers.

use super::Real;

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
}

/// Masks `grad` by the positive part of a ReLU *output*.
pub fn relu_backward<T: Real>(out: &[T], grad: &mut [T]) {
    for (g, &y) in grad.iter_mut().zip(out) {
        if y <= T::ZERO {
            *g = T::ZERO;
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

/// 2×2 average pooling; `h` and `w` must be even.
pub fn avg_pool2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = vec![T::ZERO; c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            let r0 = &src[2 * y * w..2 * y * w + w];
            let r1 = &src[(2 * y + 1) * w..(2 * y + 1) * w + w];
            for x in 0..ow {
                dst[y * ow + x] = (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * quarter;
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool2`]; `h`, `w` are the *input* dims.
pub fn avg_pool2_backward<T: Real>(grad: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut dx = vec![T::ZERO; c * h * w];
    for ch in 0..c {
        let g = &grad[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = g[(y / 2) * ow + x / 2] * quarter;
            }
        }
    }
    dx
}

/// Nearest-neighbour ×2 upsampling; `h`, `w` are the *input* dims.
pub fn upsample2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::ZERO; c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            let row = &src[(y / 2) * w..(y / 2) * w + w];
            for x in 0..ow {
                dst[y * ow + x] = row[x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]; `h`, `w` are the *input* dims.
pub fn upsample2_backward<T: Real>(grad: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::ZERO; c * h * w];
    for ch in 0..c {
        let g = &grad[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                dst[(y / 2) * w + x / 2] += g[y * ow + x];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_and_upsample_are_adjoint() {
        let (c, h, w) = (2, 4, 6);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let g: Vec<f64> = (0..c * h * w / 4).map(|i| (i as f64 * 0.71).cos()).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();

        let pooled = avg_pool2(&x, c, h, w);
        let back = avg_pool2_backward(&g, c, h, w);
        assert!((dot(&pooled, &g) - dot(&x, &back)).abs() < 1e-12);

        let up = upsample2(&g, c, h / 2, w / 2);
        let up_back = upsample2_backward(&x, c, h / 2, w / 2);
        assert!((dot(&up, &x) - dot(&g, &up_back)).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
        assert!((sigmoid(2.0f32) - 0.880797).abs() < 1e-6);
    }
}
