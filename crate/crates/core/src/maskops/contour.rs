//! Boundary polygons of binary masks.
//!
//! Contours are traced along pixel edges ("cracks"), so vertices sit on the
//! integer corner lattice and `rasterize_polygons(trace_contours(m))`
//! reproduces `m` exactly under the even-odd rule. Hole boundaries are
//! emitted as their own rings.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::BitMask;
use crate::error::Result;

/// Lattice point `(x, y)` = (column, row) of a pixel corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point(pub i32, pub i32);

/// Closed ring; the last vertex connects back to the first.
pub type Polygon = Vec<Point>;

pub fn trace_contours(m: &BitMask) -> Vec<Polygon> {
    let (h, w) = m.dims();
    let fg = |r: isize, c: isize| -> bool {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && m.get(r as usize, c as usize)
    };

    // Directed edges with the foreground pixel on their right (y grows down).
    let mut edges: Vec<(Point, Point)> = Vec::new();
    for (r, c) in m.pixels() {
        let (ri, ci) = (r as isize, c as isize);
        let (x, y) = (c as i32, r as i32);
        if !fg(ri - 1, ci) {
            edges.push((Point(x, y), Point(x + 1, y)));
        }
        if !fg(ri, ci + 1) {
            edges.push((Point(x + 1, y), Point(x + 1, y + 1)));
        }
        if !fg(ri + 1, ci) {
            edges.push((Point(x + 1, y + 1), Point(x, y + 1)));
        }
        if !fg(ri, ci - 1) {
            edges.push((Point(x, y + 1), Point(x, y)));
        }
    }

    let mut outgoing: HashMap<Point, Vec<usize>> = HashMap::new();
    for (i, e) in edges.iter().enumerate() {
        outgoing.entry(e.0).or_default().push(i);
    }

    let mut used = vec![false; edges.len()];
    let mut rings = Vec::new();
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        let mut ring = vec![edges[start].0];
        used[start] = true;
        let mut at = edges[start].1;
        while at != edges[start].0 {
            ring.push(at);
            let next = outgoing[&at]
                .iter()
                .copied()
                .find(|&i| !used[i])
                .expect("crack edges form closed loops");
            used[next] = true;
            at = edges[next].1;
        }
        rings.push(drop_collinear(ring));
    }
    rings
}

fn drop_collinear(ring: Vec<Point>) -> Polygon {
    let n = ring.len();
    if n < 3 {
        return ring;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let prev = ring[(i + n - 1) % n];
        let cur = ring[i];
        let next = ring[(i + 1) % n];
        let cross = (cur.0 - prev.0) as i64 * (next.1 - cur.1) as i64
            - (cur.1 - prev.1) as i64 * (next.0 - cur.0) as i64;
        if cross != 0 {
            out.push(cur);
        }
    }
    out
}

/// Douglas–Peucker simplification of a closed ring.
pub fn simplify_polygon(ring: &[Point], tolerance: f64) -> Polygon {
    if ring.len() <= 3 || tolerance <= 0.0 {
        return ring.to_vec();
    }
    // Split the ring at vertex 0 and the vertex farthest from it.
    let p0 = ring[0];
    let far = (1..ring.len())
        .max_by_key(|&i| {
            let dx = (ring[i].0 - p0.0) as i64;
            let dy = (ring[i].1 - p0.1) as i64;
            (dx * dx + dy * dy, std::cmp::Reverse(i))
        })
        .expect("ring has more than one vertex");

    let mut keep = vec![false; ring.len()];
    keep[0] = true;
    keep[far] = true;
    let mut closed: Vec<Point> = ring.to_vec();
    closed.push(p0);
    dp_mark(&closed, 0, far, tolerance, &mut keep);
    dp_mark(&closed, far, ring.len(), tolerance, &mut keep);
    ring.iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| *p)
        .collect()
}

fn dp_mark(pts: &[Point], a: usize, b: usize, tol: f64, keep: &mut [bool]) {
    if b <= a + 1 {
        return;
    }
    let (ax, ay) = (pts[a].0 as f64, pts[a].1 as f64);
    let (bx, by) = (pts[b].0 as f64, pts[b].1 as f64);
    let (dx, dy) = (bx - ax, by - ay);
    let len = (dx * dx + dy * dy).sqrt();
    let mut best = (0.0f64, a);
    for i in a + 1..b {
        let (px, py) = (pts[i].0 as f64, pts[i].1 as f64);
        let d = if len == 0.0 {
            ((px - ax).powi(2) + (py - ay).powi(2)).sqrt()
        } else {
            ((px - ax) * dy - (py - ay) * dx).abs() / len
        };
        if d > best.0 {
            best = (d, i);
        }
    }
    if best.0 > tol {
        keep[best.1 % keep.len()] = true;
        dp_mark(pts, a, best.1, tol, keep);
        dp_mark(pts, best.1, b, tol, keep);
    }
}

/// Even-odd fill of `rings`, sampling each pixel at its center.
pub fn rasterize_polygons(height: usize, width: usize, rings: &[Polygon]) -> Result<BitMask> {
    let mut m = BitMask::new(height, width)?;
    let mut xs: Vec<f64> = Vec::new();
    for r in 0..height {
        let y = r as f64 + 0.5;
        xs.clear();
        for ring in rings {
            let n = ring.len();
            if n < 3 {
                continue;
            }
            for i in 0..n {
                let (a, b) = (ring[i], ring[(i + 1) % n]);
                let (ay, by) = (a.1 as f64, b.1 as f64);
                if (ay <= y) != (by <= y) {
                    let t = (y - ay) / (by - ay);
                    xs.push(a.0 as f64 + t * (b.0 as f64 - a.0 as f64));
                }
            }
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        for pair in xs.chunks_exact(2) {
            let c0 = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let c1 = (pair[1] - 0.5).ceil().max(0.0) as usize;
            for c in c0..c1.min(width) {
                m.set(r, c, !m.get(r, c));
            }
        }
    }
    Ok(m)
}
