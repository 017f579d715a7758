//! Procedural part-composite objects.
//!
//! Each category is a fixed arrangement of tagged primitive shapes in a
//! local frame of roughly [-1, 1]². Instances jitter the geometry and the
//! per-part colours, then get placed with random scale, rotation and
//! mirroring on a cluttered background that also carries small objects of
//! other categories. The last four categories are pairs of touching
//! objects rather than parts of one object.

use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{export_tda, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::maskops::{connected_components, BitMask, Connectivity};
use crate::sampling::{parts_connected, Part, PartDataset, PartObject};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_categories: usize,
    pub instances_per_category: usize,
    pub image_size: usize,
    pub min_parts: usize,
    pub max_parts: usize,
    /// Relative geometry jitter of each part.
    pub shape_jitter: f64,
    /// Per-channel colour jitter, in 8-bit levels.
    pub color_jitter: u8,
    /// Per-pixel noise amplitude, in 8-bit levels.
    pub texture_noise: u8,
    /// Background clutter shapes per image.
    pub clutter: usize,
    /// Small objects of other categories per image.
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_categories: 24,
            instances_per_category: 40,
            image_size: 128,
            min_parts: 1,
            max_parts: 5,
            shape_jitter: 0.15,
            color_jitter: 24,
            texture_noise: 8,
            clutter: 6,
            distractors: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.min_parts && self.min_parts <= self.max_parts && self.max_parts <= 5) {
            return Err(Error::Config(format!(
                "part-count range {}..={} must lie within 1..=5",
                self.min_parts, self.max_parts
            )));
        }
        if self.image_size < 16 {
            return Err(Error::Config("image_size must be at least 16".into()));
        }
        if !(0.0..0.5).contains(&self.shape_jitter) {
            return Err(Error::Config("shape_jitter must lie in [0, 0.5)".into()));
        }
        let available = eligible_categories(self).len();
        if self.n_categories == 0 || self.n_categories > available {
            return Err(Error::Config(format!(
                "{} categories requested, {available} available with {}..={} parts",
                self.n_categories, self.min_parts, self.max_parts
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Prim {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    /// Upper half (y ≤ cy) of an ellipse.
    Dome { cx: f64, cy: f64, rx: f64, ry: f64 },
    Poly(Vec<(f64, f64)>),
}

impl Prim {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Prim::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Prim::Ellipse { cx, cy, rx, ry } => ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0,
            Prim::Dome { cx, cy, rx, ry } => y <= cy && ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0,
            Prim::Poly(ref pts) => {
                let mut inside = false;
                let n = pts.len();
                for i in 0..n {
                    let (ax, ay) = pts[i];
                    let (bx, by) = pts[(i + 1) % n];
                    if (ay > y) != (by > y) && x < ax + (y - ay) / (by - ay) * (bx - ax) {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }

    fn center(&self) -> (f64, f64) {
        match *self {
            Prim::Rect { x0, y0, x1, y1 } => ((x0 + x1) / 2.0, (y0 + y1) / 2.0),
            Prim::Ellipse { cx, cy, .. } | Prim::Dome { cx, cy, .. } => (cx, cy),
            Prim::Poly(ref pts) => {
                let n = pts.len() as f64;
                (
                    pts.iter().map(|p| p.0).sum::<f64>() / n,
                    pts.iter().map(|p| p.1).sum::<f64>() / n,
                )
            }
        }
    }

    /// Scale about `(ox, oy)` by `(sx, sy)`, then shift by `(dx, dy)`.
    fn transformed(&self, (ox, oy): (f64, f64), sx: f64, sy: f64, dx: f64, dy: f64) -> Prim {
        let tx = |x: f64| ox + (x - ox) * sx + dx;
        let ty = |y: f64| oy + (y - oy) * sy + dy;
        match *self {
            Prim::Rect { x0, y0, x1, y1 } => Prim::Rect {
                x0: tx(x0),
                y0: ty(y0),
                x1: tx(x1),
                y1: ty(y1),
            },
            Prim::Ellipse { cx, cy, rx, ry } => Prim::Ellipse {
                cx: tx(cx),
                cy: ty(cy),
                rx: rx * sx,
                ry: ry * sy,
            },
            Prim::Dome { cx, cy, rx, ry } => Prim::Dome {
                cx: tx(cx),
                cy: ty(cy),
                rx: rx * sx,
                ry: ry * sy,
            },
            Prim::Poly(ref pts) => Prim::Poly(pts.iter().map(|&(x, y)| (tx(x), ty(y))).collect()),
        }
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Prim {
    Prim::Rect { x0, y0, x1, y1 }
}

fn ell(cx: f64, cy: f64, rx: f64, ry: f64) -> Prim {
    Prim::Ellipse { cx, cy, rx, ry }
}

fn dome(cx: f64, cy: f64, rx: f64, ry: f64) -> Prim {
    Prim::Dome { cx, cy, rx, ry }
}

fn poly(pts: &[(f64, f64)]) -> Prim {
    Prim::Poly(pts.to_vec())
}

type Template = Vec<(&'static str, Vec<Prim>)>;

/// Category names; the index selects the template in `template`.
pub const CATEGORIES: [&str; 25] = [
    "lollipop",
    "mushroom",
    "barbell",
    "balloon",
    "hammer",
    "snowman",
    "tree",
    "table",
    "lamp",
    "bottle",
    "house",
    "key",
    "ice_cream",
    "umbrella",
    "rocket",
    "fish",
    "car",
    "robot",
    "flower",
    "traffic_light",
    "pencil",
    "cup_on_saucer",
    "ball_on_box",
    "bird_on_branch",
    "book_stack",
];

/// Parts in painting order, which is also the canonical tag order.
fn template(category: usize) -> Template {
    match category {
        0 => vec![
            ("stick", vec![rect(-0.05, -0.45, 0.05, 1.0)]),
            ("candy", vec![ell(0.0, -0.45, 0.5, 0.5)]),
        ],
        1 => vec![
            ("stem", vec![rect(-0.2, -0.1, 0.2, 0.9)]),
            ("cap", vec![dome(0.0, 0.05, 0.9, 0.75)]),
        ],
        2 => vec![
            ("bar", vec![rect(-0.95, -0.07, 0.95, 0.07)]),
            (
                "plates",
                vec![rect(-0.72, -0.5, -0.55, 0.5), rect(0.55, -0.5, 0.72, 0.5)],
            ),
        ],
        3 => vec![
            ("string", vec![rect(-0.035, 0.35, 0.035, 1.0)]),
            ("knot", vec![poly(&[(0.0, 0.18), (-0.14, 0.45), (0.14, 0.45)])]),
            ("balloon", vec![ell(0.0, -0.3, 0.5, 0.6)]),
        ],
        4 => vec![
            ("handle", vec![rect(-0.1, -0.5, 0.1, 1.0)]),
            ("head", vec![rect(-0.6, -0.9, 0.6, -0.45)]),
        ],
        5 => vec![
            ("base", vec![ell(0.0, 0.5, 0.5, 0.45)]),
            ("body", vec![ell(0.0, -0.15, 0.37, 0.33)]),
            ("head", vec![ell(0.0, -0.65, 0.25, 0.24)]),
        ],
        6 => vec![
            ("trunk", vec![rect(-0.13, 0.2, 0.13, 1.0)]),
            ("crown", vec![poly(&[(0.0, -1.0), (-0.75, 0.45), (0.75, 0.45)])]),
        ],
        7 => vec![
            (
                "legs",
                vec![rect(-0.72, -0.3, -0.55, 0.9), rect(0.55, -0.3, 0.72, 0.9)],
            ),
            ("top", vec![rect(-0.9, -0.5, 0.9, -0.25)]),
        ],
        8 => vec![
            ("base", vec![ell(0.0, 0.85, 0.45, 0.13)]),
            ("pole", vec![rect(-0.06, -0.3, 0.06, 0.85)]),
            (
                "shade",
                vec![poly(&[(-0.25, -0.9), (0.25, -0.9), (0.55, -0.25), (-0.55, -0.25)])],
            ),
        ],
        9 => vec![
            ("body", vec![rect(-0.4, -0.2, 0.4, 1.0)]),
            ("neck", vec![rect(-0.15, -0.75, 0.15, -0.15)]),
            ("cap", vec![rect(-0.2, -0.97, 0.2, -0.72)]),
        ],
        10 => vec![
            ("walls", vec![rect(-0.7, -0.15, 0.7, 0.9)]),
            ("roof", vec![poly(&[(0.0, -0.9), (-0.9, -0.1), (0.9, -0.1)])]),
            ("door", vec![rect(-0.17, 0.35, 0.17, 0.9)]),
        ],
        11 => vec![
            ("bow", vec![ell(-0.6, 0.0, 0.35, 0.35)]),
            ("shaft", vec![rect(-0.3, -0.09, 0.95, 0.09)]),
            (
                "teeth",
                vec![rect(0.52, 0.05, 0.64, 0.35), rect(0.76, 0.05, 0.88, 0.28)],
            ),
        ],
        12 => vec![
            ("cone", vec![poly(&[(-0.42, -0.25), (0.42, -0.25), (0.0, 1.0)])]),
            ("scoop", vec![ell(0.0, -0.45, 0.47, 0.43)]),
        ],
        13 => vec![
            (
                "handle",
                vec![rect(-0.06, -0.2, 0.06, 0.9), rect(-0.3, 0.8, 0.06, 0.92)],
            ),
            ("canopy", vec![dome(0.0, -0.1, 0.95, 0.75)]),
        ],
        14 => vec![
            (
                "fins",
                vec![
                    poly(&[(-0.25, 0.35), (-0.6, 0.97), (-0.25, 0.97)]),
                    poly(&[(0.25, 0.35), (0.6, 0.97), (0.25, 0.97)]),
                ],
            ),
            ("body", vec![rect(-0.26, -0.5, 0.26, 0.95)]),
            ("nose", vec![poly(&[(0.0, -1.0), (-0.26, -0.48), (0.26, -0.48)])]),
        ],
        15 => vec![
            ("tail", vec![poly(&[(0.5, 0.0), (1.0, -0.45), (1.0, 0.45)])]),
            ("body", vec![ell(0.0, 0.0, 0.65, 0.38)]),
            ("fin", vec![poly(&[(-0.25, -0.28), (0.25, -0.28), (0.05, -0.68)])]),
        ],
        16 => vec![
            (
                "wheels",
                vec![ell(-0.5, 0.45, 0.23, 0.23), ell(0.5, 0.45, 0.23, 0.23)],
            ),
            ("body", vec![rect(-0.95, -0.08, 0.95, 0.42)]),
            (
                "cabin",
                vec![poly(&[(-0.5, -0.06), (0.45, -0.06), (0.3, -0.5), (-0.35, -0.5)])],
            ),
        ],
        17 => vec![
            (
                "legs",
                vec![rect(-0.35, 0.4, -0.12, 1.0), rect(0.12, 0.4, 0.35, 1.0)],
            ),
            (
                "arms",
                vec![rect(-0.75, -0.35, -0.43, 0.3), rect(0.43, -0.35, 0.75, 0.3)],
            ),
            ("torso", vec![rect(-0.45, -0.45, 0.45, 0.45)]),
            ("head", vec![rect(-0.25, -0.88, 0.25, -0.43)]),
        ],
        18 => vec![
            ("stem", vec![rect(-0.05, -0.1, 0.05, 1.0)]),
            ("petals", vec![ell(0.0, -0.35, 0.58, 0.58)]),
            ("center", vec![ell(0.0, -0.35, 0.22, 0.22)]),
        ],
        19 => vec![
            ("pole", vec![rect(-0.09, 0.5, 0.09, 1.0)]),
            ("housing", vec![rect(-0.32, -0.97, 0.32, 0.55)]),
            (
                "lights",
                vec![
                    ell(0.0, -0.62, 0.18, 0.18),
                    ell(0.0, -0.2, 0.18, 0.18),
                    ell(0.0, 0.22, 0.18, 0.18),
                ],
            ),
        ],
        20 => vec![
            ("eraser", vec![rect(-1.0, -0.16, -0.72, 0.16)]),
            ("body", vec![rect(-0.74, -0.16, 0.6, 0.16)]),
            ("tip", vec![poly(&[(0.58, -0.16), (0.58, 0.16), (1.0, 0.0)])]),
        ],
        21 => vec![
            ("saucer", vec![ell(0.0, 0.75, 0.92, 0.2)]),
            (
                "cup",
                vec![
                    poly(&[(-0.5, -0.45), (0.5, -0.45), (0.38, 0.65), (-0.38, 0.65)]),
                    rect(0.42, -0.25, 0.7, -0.1),
                    rect(0.58, -0.25, 0.7, 0.2),
                ],
            ),
        ],
        22 => vec![
            ("box", vec![rect(-0.65, 0.0, 0.65, 0.95)]),
            ("ball", vec![ell(0.0, -0.4, 0.45, 0.45)]),
        ],
        23 => vec![
            ("branch", vec![rect(-1.0, 0.32, 1.0, 0.5)]),
            (
                "bird",
                vec![
                    ell(-0.05, 0.05, 0.42, 0.3),
                    ell(0.35, -0.28, 0.2, 0.2),
                    poly(&[(0.5, -0.35), (0.75, -0.25), (0.5, -0.2)]),
                ],
            ),
        ],
        24 => vec![
            ("bottom_book", vec![rect(-0.85, 0.45, 0.85, 0.92)]),
            ("middle_book", vec![rect(-0.65, 0.0, 0.72, 0.47)]),
            ("top_book", vec![rect(-0.75, -0.42, 0.55, 0.02)]),
        ],
        _ => unreachable!("category index out of range"),
    }
}

fn eligible_categories(config: &SynthConfig) -> Vec<usize> {
    (0..CATEGORIES.len())
        .filter(|&i| (config.min_parts..=config.max_parts).contains(&template(i).len()))
        .collect()
}

/// Stable per-(category, tag) base colour, independent of the seed so all
/// splits share one palette.
fn base_color(category: &str, tag: &str) -> [f64; 3] {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in category.bytes().chain([b'/']).chain(tag.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let hue = (h % 360) as f64;
    let sat = 0.55 + ((h >> 16) % 40) as f64 / 100.0;
    let val = 0.5 + ((h >> 32) % 45) as f64 / 100.0;
    hsv_to_rgb(hue, sat, val)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

fn jitter_color(rng: &mut ChaCha8Rng, base: [f64; 3], amount: u8) -> [f64; 3] {
    let a = amount as f64;
    base.map(|c| (c + rng.gen_range(-a..=a)).clamp(0.0, 255.0))
}

/// A template with per-part geometric jitter applied.
fn jittered(category: usize, rng: &mut ChaCha8Rng, j: f64) -> Template {
    let (gx, gy) = (1.0 + rng.gen_range(-j..=j) / 2.0, 1.0 + rng.gen_range(-j..=j) / 2.0);
    template(category)
        .into_iter()
        .map(|(tag, prims)| {
            let s = 1.0 + rng.gen_range(-j..=j);
            let (dx, dy) = (rng.gen_range(-j..=j) * 0.2, rng.gen_range(-j..=j) * 0.2);
            let prims = prims
                .iter()
                .map(|p| {
                    let c = p.center();
                    p.transformed(c, s, s, dx, dy).transformed((0.0, 0.0), gx, gy, 0.0, 0.0)
                })
                .collect();
            (tag, prims)
        })
        .collect()
}

/// Similarity placement: pixel centre -> local frame.
struct Placement {
    cx: f64,
    cy: f64,
    radius: f64,
    cos: f64,
    sin: f64,
    mirror: bool,
}

impl Placement {
    fn random(rng: &mut ChaCha8Rng, size: f64, radius: (f64, f64), spread: f64) -> Self {
        let angle: f64 = rng.gen_range(-0.3..=0.3);
        Self {
            cx: size / 2.0 + rng.gen_range(-spread..=spread) * size,
            cy: size / 2.0 + rng.gen_range(-spread..=spread) * size,
            radius: rng.gen_range(radius.0..=radius.1) * size,
            cos: angle.cos(),
            sin: angle.sin(),
            mirror: rng.gen_bool(0.5),
        }
    }

    fn local(&self, col: usize, row: usize) -> (f64, f64) {
        let (dx, dy) = (col as f64 + 0.5 - self.cx, row as f64 + 0.5 - self.cy);
        let x = (self.cos * dx + self.sin * dy) / self.radius;
        let y = (-self.sin * dx + self.cos * dy) / self.radius;
        (if self.mirror { -x } else { x }, y)
    }

    /// Pixel bounds that can contain the object (its local frame fits in
    /// a disk of radius 1.5).
    fn bounds(&self, size: usize) -> (usize, usize, usize, usize) {
        let r = 1.5 * self.radius;
        let clamp = |v: f64| v.clamp(0.0, size as f64) as usize;
        (
            clamp(self.cy - r),
            clamp((self.cy + r).ceil()),
            clamp(self.cx - r),
            clamp((self.cx + r).ceil()),
        )
    }
}

/// Paint `shape` into `canvas`, returning the pixels each part ends up
/// owning (later parts cover earlier ones).
fn paint(
    canvas: &mut RgbImage,
    owner: &mut [u8],
    shape: &Template,
    colors: &[[f64; 3]],
    place: &Placement,
    rng: &mut ChaCha8Rng,
    noise: u8,
) {
    let size = canvas.width() as usize;
    let (r0, r1, c0, c1) = place.bounds(size);
    let n = noise as i32;
    for r in r0..r1 {
        for c in c0..c1 {
            let (x, y) = place.local(c, r);
            let hit = shape
                .iter()
                .enumerate()
                .rev()
                .find(|(_, (_, prims))| prims.iter().any(|p| p.contains(x, y)));
            if let Some((i, _)) = hit {
                let shade = 1.0 - 0.12 * (y + 1.0) / 2.0;
                let px = colors[i].map(|v| {
                    let jitter = if n > 0 { rng.gen_range(-n..=n) } else { 0 };
                    ((v * shade) as i32 + jitter).clamp(0, 255) as u8
                });
                canvas.put_pixel(c as u32, r as u32, Rgb(px));
                owner[r * size + c] = (i + 1) as u8;
            }
        }
    }
}

fn background(rng: &mut ChaCha8Rng, config: &SynthConfig) -> RgbImage {
    let size = config.image_size as u32;
    let top: [f64; 3] = [0; 3].map(|_| rng.gen_range(60.0..200.0));
    let bottom: [f64; 3] = [0; 3].map(|_| rng.gen_range(60.0..200.0));
    let mut img = RgbImage::from_fn(size, size, |_, y| {
        let t = y as f64 / size as f64;
        Rgb([0, 1, 2].map(|ch| (top[ch] * (1.0 - t) + bottom[ch] * t) as u8))
    });
    let s = config.image_size as f64;
    for _ in 0..config.clutter {
        let color: [u8; 3] = [0; 3].map(|_| rng.gen_range(40..230));
        let (cx, cy) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
        let (rx, ry) = (rng.gen_range(0.04..0.2) * s, rng.gen_range(0.04..0.2) * s);
        let square = rng.gen_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
                let inside = if square {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                } else {
                    dx * dx + dy * dy <= 1.0
                };
                if inside {
                    img.put_pixel(x, y, Rgb(color));
                }
            }
        }
    }
    img
}

fn masks_from_owner(owner: &[u8], n_parts: usize, size: usize) -> Result<Vec<BitMask>> {
    (1..=n_parts)
        .map(|i| BitMask::from_vec(size, size, owner.iter().map(|&o| (o as usize == i) as u8).collect()))
        .collect()
}

fn min_part_pixels(size: usize) -> usize {
    (size * size / 2000).max(8)
}

/// Whether the generated parts satisfy the dataset contract: every part
/// large enough, the object one 8-connected region, and two-part objects
/// connected.
fn acceptable(masks: &[BitMask], size: usize) -> Result<bool> {
    if masks.iter().any(|m| m.count() < min_part_pixels(size)) {
        return Ok(false);
    }
    let mut whole = masks[0].clone();
    for m in &masks[1..] {
        whole = whole.union(m)?;
    }
    if connected_components(&whole, Connectivity::Eight).count() != 1 {
        return Ok(false);
    }
    if masks.len() == 2 && !parts_connected(&masks[0], &masks[1])? {
        return Ok(false);
    }
    Ok(true)
}

fn render_instance(
    config: &SynthConfig,
    categories: &[usize],
    slot: usize,
    instance: usize,
) -> Result<PartObject> {
    let category = categories[slot];
    let name = CATEGORIES[category];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(((slot as u64) << 32) | instance as u64);
    let size = config.image_size;

    for attempt in 0..64 {
        let j = if attempt < 48 { config.shape_jitter } else { 0.0 };
        let mut canvas = background(&mut rng, config);
        let mut scratch = vec![0u8; size * size];
        let others: Vec<usize> = categories.iter().copied().filter(|&c| c != category).collect();
        for _ in 0..config.distractors.min(others.len()) {
            let other = others[rng.gen_range(0..others.len())];
            let shape = jittered(other, &mut rng, j);
            let colors: Vec<[f64; 3]> = shape
                .iter()
                .map(|(tag, _)| jitter_color(&mut rng, base_color(CATEGORIES[other], tag), config.color_jitter))
                .collect();
            let place = Placement::random(&mut rng, size as f64, (0.1, 0.18), 0.4);
            paint(&mut canvas, &mut scratch, &shape, &colors, &place, &mut rng, config.texture_noise);
        }

        let shape = jittered(category, &mut rng, j);
        let colors: Vec<[f64; 3]> = shape
            .iter()
            .map(|(tag, _)| jitter_color(&mut rng, base_color(name, tag), config.color_jitter))
            .collect();
        let place = Placement::random(&mut rng, size as f64, (0.26, 0.38), 0.1);
        let mut owner = vec![0u8; size * size];
        paint(&mut canvas, &mut owner, &shape, &colors, &place, &mut rng, config.texture_noise);

        let masks = masks_from_owner(&owner, shape.len(), size)?;
        if acceptable(&masks, size)? {
            return Ok(PartObject {
                object_id: format!("{name}_{instance:04}"),
                category: name.to_string(),
                image: Arc::new(canvas),
                parts: shape
                    .iter()
                    .zip(masks)
                    .map(|((tag, _), mask)| Part {
                        tag: tag.to_string(),
                        mask,
                    })
                    .collect(),
            });
        }
    }
    Err(Error::Config(format!(
        "could not render a valid {name} instance at image size {size}"
    )))
}

/// Render the dataset in memory.
pub fn synthesize(config: &SynthConfig) -> Result<PartDataset> {
    config.validate()?;
    let categories: Vec<usize> = eligible_categories(config)
        .into_iter()
        .take(config.n_categories)
        .collect();
    let jobs: Vec<(usize, usize)> = (0..categories.len())
        .flat_map(|s| (0..config.instances_per_category).map(move |i| (s, i)))
        .collect();
    let objects = jobs
        .par_iter()
        .map(|&(slot, i)| render_instance(config, &categories, slot, i))
        .collect::<Result<Vec<_>>>()?;
    PartDataset::new(objects)
}

/// Render the dataset and write it under `root/{split}`.
pub fn generate_synthetic(config: &SynthConfig, root: &Path, split: Split) -> Result<DatasetManifest> {
    let dataset = synthesize(config)?;
    export_tda(&dataset, root, split)
}
