use super::BitMask;
use crate::error::{Error, Result};

/// Exact squared Euclidean distance from every pixel to the nearest
/// background pixel, where everything outside the image counts as
/// background. Background pixels get 0.
///
/// Two passes of the lower-envelope-of-parabolas algorithm over a grid padded
/// by one background pixel on each side; all intermediate values are
/// integers so the result is exact.
pub fn squared_distance_to_background(m: &BitMask) -> Vec<u64> {
    let (h, w) = m.dims();
    let (ph, pw) = (h + 2, w + 2);
    // Larger than any squared distance on the padded grid.
    let inf = ((ph * ph + pw * pw) as i64) + 1;

    let mut grid = vec![0i64; ph * pw];
    for r in 0..h {
        for c in 0..w {
            if m.get(r, c) {
                grid[(r + 1) * pw + c + 1] = inf;
            }
        }
    }

    let mut f = vec![0i64; ph.max(pw)];
    let mut d = vec![0i64; ph.max(pw)];
    for c in 0..pw {
        for r in 0..ph {
            f[r] = grid[r * pw + c];
        }
        lower_envelope(&f[..ph], &mut d[..ph], inf);
        for r in 0..ph {
            grid[r * pw + c] = d[r];
        }
    }
    for r in 0..ph {
        f[..pw].copy_from_slice(&grid[r * pw..(r + 1) * pw]);
        lower_envelope(&f[..pw], &mut d[..pw], inf);
        grid[r * pw..(r + 1) * pw].copy_from_slice(&d[..pw]);
    }

    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            out.push(grid[(r + 1) * pw + c + 1] as u64);
        }
    }
    out
}

/// One-dimensional squared distance transform of sampled function `f`.
/// Entries equal to `inf` are treated as +infinity.
fn lower_envelope(f: &[i64], d: &mut [i64], inf: i64) {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q] < inf).collect();
    if sites.is_empty() {
        d.iter_mut().for_each(|v| *v = inf);
        return;
    }
    // Parabola vertices and their boundaries, boundaries kept as exact
    // rationals (numerator, denominator) with positive denominators.
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<(i64, i64)> = Vec::with_capacity(sites.len());
    let intersect = |q: usize, p: usize| -> (i64, i64) {
        let (q, p) = (q as i64, p as i64);
        let num = (f[q as usize] + q * q) - (f[p as usize] + p * p);
        let den = 2 * (q - p);
        (num, den)
    };
    // a/b <= c/d with b, d > 0
    let le = |a: (i64, i64), b: (i64, i64)| -> bool { (a.0 as i128) * (b.1 as i128) <= (b.0 as i128) * (a.1 as i128) };

    for &q in &sites {
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push((i64::MIN / 4, 1));
                    break;
                }
                Some(&p) => {
                    let s = intersect(q, p);
                    if v.len() > 1 && le(s, *z.last().unwrap()) {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }

    let mut k = 0usize;
    for (q, out) in d.iter_mut().enumerate() {
        while k + 1 < v.len() && le(z[k + 1], (q as i64, 1)) {
            k += 1;
        }
        let dq = q as i64 - v[k] as i64;
        *out = dq * dq + f[v[k]];
    }
}

/// Interior "center" of a mask: the foreground pixel farthest from the
/// background (image border included).
///
/// Among pixels sharing the maximal distance, the one closest to the
/// centroid of that tied set is chosen, with remaining ties resolved
/// row-major. The centroid rule places the click mid-way along ridges of
/// constant width (bars, strokes).
pub fn interior_center(m: &BitMask) -> Result<(usize, usize)> {
    if m.is_empty() {
        return Err(Error::EmptyMask);
    }
    let dist = squared_distance_to_background(m);
    let w = m.width();
    let best = *dist.iter().max().expect("mask is nonempty");
    let ties: Vec<(usize, usize)> = dist
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == best)
        .map(|(i, _)| (i / w, i % w))
        .collect();
    Ok(closest_to_centroid(&ties))
}

/// Row-major first point minimizing the distance to the centroid of
/// `points`, compared in exact integer arithmetic.
pub(crate) fn closest_to_centroid(points: &[(usize, usize)]) -> (usize, usize) {
    let n = points.len() as i128;
    let sr: i128 = points.iter().map(|p| p.0 as i128).sum();
    let sc: i128 = points.iter().map(|p| p.1 as i128).sum();
    let mut best = points[0];
    let mut best_d = i128::MAX;
    for &(r, c) in points {
        let dr = n * r as i128 - sr;
        let dc = n * c as i128 - sc;
        let d = dr * dr + dc * dc;
        if d < best_d {
            best_d = d;
            best = (r, c);
        }
    }
    best
}
