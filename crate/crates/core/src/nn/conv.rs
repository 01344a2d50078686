//! Stride-1, same-padded 2-D convolution lowered to GEMM via im2col.

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    /// Odd kernel size; padding is `k / 2`.
    pub k: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Unfold `x` (`cin × h × w`) into `col` (`cin·k·k × h·w`).
pub fn im2col<T: Real>(shape: ConvShape, x: &[T], h: usize, w: usize, col: &mut Vec<T>) {
    let k = shape.k;
    let pad = (k / 2) as isize;
    let area = h * w;
    col.clear();
    col.resize(shape.patch_len() * area, T::ZERO);
    for ci in 0..shape.cin {
        let src = &x[ci * area..(ci + 1) * area];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * area..(row + 1) * area];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = sy as usize * w;
                    let d0 = y * w;
                    let sx0 = (x_lo as isize + dx) as usize;
                    let len = x_hi - x_lo;
                    dst[d0 + x_lo..d0 + x_hi].copy_from_slice(&src[s0 + sx0..s0 + sx0 + len]);
                }
            }
        }
    }
}

/// Fold `col` back onto `dx` (accumulating), the adjoint of [`im2col`].
pub fn col2im<T: Real>(shape: ConvShape, col: &[T], h: usize, w: usize, dx: &mut [T]) {
    let k = shape.k;
    let pad = (k / 2) as isize;
    let area = h * w;
    for ci in 0..shape.cin {
        let dst = &mut dx[ci * area..(ci + 1) * area];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * area..(row + 1) * area];
                let dy = ky as isize - pad;
                let ddx = kx as isize - pad;
                let x_lo = (-ddx).max(0) as usize;
                let x_hi = (w as isize - ddx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let t0 = sy as usize * w;
                    let s0 = y * w;
                    let tx0 = (x_lo as isize + ddx) as usize;
                    let len = x_hi - x_lo;
                    for (d, &s) in dst[t0 + tx0..t0 + tx0 + len]
                        .iter_mut()
                        .zip(&src[s0 + x_lo..s0 + x_lo + len])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Forward pass. For `k > 1` the unfolded input is left in `col` for the
/// backward pass; for `k == 1` the input itself plays that role.
pub fn forward<T: Real>(
    shape: ConvShape,
    weight: &[T],
    bias: &[T],
    x: &[T],
    h: usize,
    w: usize,
    col: &mut Vec<T>,
) -> Vec<T> {
    let area = h * w;
    let kk = shape.patch_len();
    let mut out = vec![T::ZERO; shape.cout * area];
    for (o, &b) in bias.iter().enumerate() {
        out[o * area..(o + 1) * area].fill(b);
    }
    let b: &[T] = if shape.k == 1 {
        col.clear();
        x
    } else {
        im2col(shape, x, h, w, col);
        col
    };
    T::gemm(
        shape.cout,
        kk,
        area,
        T::ONE,
        weight,
        (kk as isize, 1),
        b,
        (area as isize, 1),
        T::ONE,
        &mut out,
        (area as isize, 1),
    );
    out
}

/// Backward pass. Accumulates into `dweight`/`dbias` and returns the input
/// gradient when `need_input_grad` is set.
#[allow(clippy::too_many_arguments)]
pub fn backward<T: Real>(
    shape: ConvShape,
    weight: &[T],
    x: &[T],
    col: &[T],
    h: usize,
    w: usize,
    dout: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let area = h * w;
    let kk = shape.patch_len();
    let unfolded: &[T] = if shape.k == 1 { x } else { col };
    for (o, db) in dbias.iter_mut().enumerate() {
        *db += dout[o * area..(o + 1) * area].iter().copied().sum::<T>();
    }
    // dW += dout · colᵀ
    T::gemm(
        shape.cout,
        area,
        kk,
        T::ONE,
        dout,
        (area as isize, 1),
        unfolded,
        (1, area as isize),
        T::ONE,
        dweight,
        (kk as isize, 1),
    );
    if !need_input_grad {
        return None;
    }
    // dcol = Wᵀ · dout
    let mut dcol = vec![T::ZERO; kk * area];
    T::gemm(
        kk,
        shape.cout,
        area,
        T::ONE,
        weight,
        (1, kk as isize),
        dout,
        (area as isize, 1),
        T::ZERO,
        &mut dcol,
        (area as isize, 1),
    );
    if shape.k == 1 {
        return Some(dcol);
    }
    let mut dx = vec![T::ZERO; shape.cin * area];
    col2im(shape, &dcol, h, w, &mut dx);
    Some(dx)
}
