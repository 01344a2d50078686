//! Dice / ASSD evaluation and report rendering.

mod distance;
pub mod reference;
mod report;

pub use distance::{assd, assd_brute_force, squared_distance_transform, surface, AssdValue};
pub use report::{evaluate, evaluate_predictions, render_table, ClassSummary, EvalOptions, EvalReport, SampleEval};

use crate::error::Result;
use crate::planes::Mask;

/// Overlap in percent; two empty masks agree perfectly (100).
pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    pred.ensure_dims(gt)?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let (p, g) = (p != 0, g != 0);
        inter += (p && g) as usize;
        total += p as usize + g as usize;
    }
    if total == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * inter as f64 / total as f64)
}

/// Largest 8-connected component of a single-channel mask. Ties keep the
/// component reached first in raster order.
pub fn largest_component(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let mut label = vec![0u32; h * w];
    let mut best = (0usize, 0u32);
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.data[start] == 0 || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        stack.push(start);
        let mut size = 0;
        while let Some(v) = stack.pop() {
            size += 1;
            let (y, x) = ((v / w) as isize, (v % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let u = ny as usize * w + nx as usize;
                    if mask.data[u] != 0 && label[u] == 0 {
                        label[u] = next;
                        stack.push(u);
                    }
                }
            }
        }
        if size > best.0 {
            best = (size, next);
        }
    }
    let mut out = Mask::zeros(1, h, w);
    if best.0 > 0 {
        for (o, &l) in out.data.iter_mut().zip(&label) {
            *o = (l == best.1) as u8;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planes::Planes;

    fn m(h: usize, w: usize, on: &[(usize, usize)]) -> Mask {
        let mut out = Mask::zeros(1, h, w);
        for &(y, x) in on {
            out.data[y * w + x] = 1;
        }
        out
    }

    #[test]
    fn dice_examples() {
        let a = m(2, 2, &[(0, 0), (0, 1)]);
        assert_eq!(dice(&a, &a).unwrap(), 100.0);
        assert_eq!(dice(&a, &m(2, 2, &[(1, 0), (1, 1)])).unwrap(), 0.0);
        assert_eq!(dice(&a, &m(2, 2, &[(0, 0), (1, 1)])).unwrap(), 50.0);
        assert_eq!(dice(&m(2, 2, &[]), &m(2, 2, &[])).unwrap(), 100.0);
        assert!(dice(&a, &Planes::zeros(1, 3, 2)).is_err());
    }

    #[test]
    fn lcc_keeps_the_biggest_blob() {
        let mask = m(4, 5, &[(0, 0), (3, 2), (3, 3), (2, 4)]);
        let kept = largest_component(&mask);
        assert_eq!(kept, m(4, 5, &[(3, 2), (3, 3), (2, 4)]));
        assert_eq!(largest_component(&m(3, 3, &[])), m(3, 3, &[]));
    }
}
