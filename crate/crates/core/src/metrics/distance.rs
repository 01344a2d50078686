use crate::error::Result;
use crate::planes::Mask;

/// Boundary pixels: the mask minus its 4-connected erosion, with the area
/// outside the image counted as background.
pub fn surface(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let on = |y: isize, x: isize| y >= 0 && x >= 0 && y < h as isize && x < w as isize && mask.data[y as usize * w + x as usize] != 0;
    let mut out = Mask::zeros(1, h, w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            if on(y, x) && !(on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1)) {
                out.data[y as usize * w + x as usize] = 1;
            }
        }
    }
    out
}

/// Exact squared Euclidean distance from every pixel to the nearest nonzero
/// pixel (separable lower-envelope algorithm of Meijster et al.). Returns
/// `None` if the mask is empty.
pub fn squared_distance_transform(mask: &Mask) -> Option<Vec<i64>> {
    let (h, w) = (mask.height, mask.width);
    if mask.count_ones() == 0 {
        return None;
    }
    let inf = (h + w + 1) as i64;
    // column pass: vertical distance to the nearest feature
    let mut g = vec![0i64; h * w];
    for x in 0..w {
        g[x] = if mask.data[x] != 0 { 0 } else { inf };
        for y in 1..h {
            g[y * w + x] = if mask.data[y * w + x] != 0 { 0 } else { g[(y - 1) * w + x] + 1 };
        }
        for y in (0..h.saturating_sub(1)).rev() {
            if g[(y + 1) * w + x] < g[y * w + x] {
                g[y * w + x] = g[(y + 1) * w + x] + 1;
            }
        }
    }
    let mut out = vec![0i64; h * w];
    let (mut s, mut t) = (vec![0i64; w], vec![0i64; w]);
    for y in 0..h {
        let gr = &g[y * w..(y + 1) * w];
        let f = |x: i64, i: i64| (x - i) * (x - i) + gr[i as usize] * gr[i as usize];
        let sep = |i: i64, u: i64| (u * u - i * i + gr[u as usize] * gr[u as usize] - gr[i as usize] * gr[i as usize]).div_euclid(2 * (u - i));
        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..w as i64 {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let v = 1 + sep(s[q as usize], u);
                if v < w as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = v;
                }
            }
        }
        for u in (0..w as i64).rev() {
            out[y * w + u as usize] = f(u, s[q as usize]);
            if u == t[q as usize] {
                q -= 1;
            }
        }
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssdValue {
    pub value: f64,
    /// Set when exactly one mask is empty and `value` is the image-diagonal
    /// sentinel.
    pub sentinel: bool,
}

fn directed_mean(from: &Mask, dist2: &[i64]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (v, &on) in from.data.iter().enumerate() {
        if on != 0 {
            sum += (dist2[v] as f64).sqrt();
            n += 1;
        }
    }
    sum / n as f64
}

fn sentinel_for(pred: &Mask, gt: &Mask) -> Option<AssdValue> {
    match (pred.count_ones() == 0, gt.count_ones() == 0) {
        (true, true) => Some(AssdValue { value: 0.0, sentinel: false }),
        (false, false) => None,
        _ => Some(AssdValue {
            value: ((pred.height * pred.height + pred.width * pred.width) as f64).sqrt(),
            sentinel: true,
        }),
    }
}

/// Average symmetric surface distance in pixels.
pub fn assd(pred: &Mask, gt: &Mask) -> Result<AssdValue> {
    pred.ensure_dims(gt)?;
    if let Some(s) = sentinel_for(pred, gt) {
        return Ok(s);
    }
    let (sp, sg) = (surface(pred), surface(gt));
    let dp = squared_distance_transform(&sp).expect("nonempty mask has a surface");
    let dg = squared_distance_transform(&sg).expect("nonempty mask has a surface");
    let value = 0.5 * (directed_mean(&sp, &dg) + directed_mean(&sg, &dp));
    Ok(AssdValue { value, sentinel: false })
}

/// All-pairs reference for [`assd`]; quadratic in the surface sizes.
pub fn assd_brute_force(pred: &Mask, gt: &Mask) -> Result<AssdValue> {
    pred.ensure_dims(gt)?;
    if let Some(s) = sentinel_for(pred, gt) {
        return Ok(s);
    }
    let w = pred.width;
    let points = |m: &Mask| -> Vec<(i64, i64)> {
        let s = surface(m);
        (0..s.data.len()).filter(|&v| s.data[v] != 0).map(|v| ((v / w) as i64, (v % w) as i64)).collect()
    };
    let (a, b) = (points(pred), points(gt));
    let directed = |from: &[(i64, i64)], to: &[(i64, i64)]| {
        let mut sum = 0.0;
        for &(y, x) in from {
            let best = to.iter().map(|&(v, u)| ((y - v).pow(2) + (x - u).pow(2)) as f64).map(f64::sqrt).fold(f64::INFINITY, f64::min);
            sum += best;
        }
        sum / from.len() as f64
    };
    Ok(AssdValue {
        value: 0.5 * (directed(&a, &b) + directed(&b, &a)),
        sentinel: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(h: usize, w: usize, on: &[(usize, usize)]) -> Mask {
        let mut out = Mask::zeros(1, h, w);
        for &(y, x) in on {
            out.data[y * w + x] = 1;
        }
        out
    }

    #[test]
    fn single_pixels_three_apart() {
        let a = m(1, 4, &[(0, 0)]);
        let b = m(1, 4, &[(0, 3)]);
        assert_eq!(assd(&a, &b).unwrap().value, 3.0);
        assert_eq!(assd(&a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn surface_of_a_filled_square_is_its_ring() {
        let sq: Vec<_> = (1..4).flat_map(|y| (1..4).map(move |x| (y, x))).collect();
        let s = surface(&m(5, 5, &sq));
        assert_eq!(s.count_ones(), 8);
        assert_eq!(s.data[2 * 5 + 2], 0);
    }

    #[test]
    fn empty_masks_use_the_sentinel() {
        let a = m(3, 4, &[(1, 1)]);
        let e = m(3, 4, &[]);
        let v = assd(&a, &e).unwrap();
        assert!(v.sentinel);
        assert_eq!(v.value, 5.0);
        assert_eq!(assd(&e, &e).unwrap(), AssdValue { value: 0.0, sentinel: false });
    }

    #[test]
    fn transform_matches_brute_force() {
        let mask = m(6, 7, &[(0, 0), (5, 6), (2, 3)]);
        let d = squared_distance_transform(&mask).unwrap();
        for y in 0..6i64 {
            for x in 0..7i64 {
                let want = [(0, 0), (5, 6), (2, 3)].iter().map(|&(v, u)| (y - v).pow(2) + (x - u).pow(2)).min().unwrap();
                assert_eq!(d[(y * 7 + x) as usize], want);
            }
        }
    }
}
