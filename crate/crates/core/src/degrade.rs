//! Reference-quality sweeps: coarsen reference masks into polygons, or
//! shrink the reference object inside its image, and re-run evaluation.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskops::{rasterize_polygons, trace_contours, BitMask, Point, Polygon};
use crate::prompt::ReferenceGuidance;
use crate::robot::{evaluate, EvalConfig, NoCReport, Segmenter};
use crate::sampling::EvalSample;

/// Keep every `interval`-th unit step of each mask boundary and refill the
/// resulting polygons. Intervals 0 and 1 return the mask unchanged.
pub fn polygonize(mask: &BitMask, interval: usize) -> Result<BitMask> {
    if interval <= 1 {
        return Ok(mask.clone());
    }
    let (h, w) = mask.dims();
    let rings: Vec<Polygon> = trace_contours(mask)
        .iter()
        .map(|ring| {
            unit_steps(ring)
                .into_iter()
                .step_by(interval)
                .collect::<Polygon>()
        })
        .filter(|ring| ring.len() >= 3)
        .collect();
    rasterize_polygons(h, w, &rings)
}

/// Every lattice point along an axis-aligned ring.
fn unit_steps(ring: &[Point]) -> Vec<Point> {
    let mut out = Vec::new();
    for (i, &a) in ring.iter().enumerate() {
        let b = ring[(i + 1) % ring.len()];
        let (dx, dy) = ((b.0 - a.0).signum(), (b.1 - a.1).signum());
        let mut p = a;
        while p != b {
            out.push(p);
            p = Point(p.0 + dx, p.1 + dy);
        }
    }
    out
}

/// Shrink the reference image and masks by `scale` and paste them centred
/// on a canvas of the original size filled with the image's mean colour.
/// `scale == 1` returns the guidance unchanged.
pub fn downscale_reference(guidance: &ReferenceGuidance, scale: f64) -> Result<ReferenceGuidance> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Config(format!("reference scale {scale} not in (0, 1]")));
    }
    if scale == 1.0 {
        return Ok(guidance.clone());
    }
    let (w, h) = guidance.image.dimensions();
    let nw = ((w as f64 * scale).round() as u32).max(1);
    let nh = ((h as f64 * scale).round() as u32).max(1);
    let (x0, y0) = ((w - nw) / 2, (h - nh) / 2);

    let n = (w as u64 * h as u64).max(1);
    let mut sum = [0u64; 3];
    for px in guidance.image.pixels() {
        for ch in 0..3 {
            sum[ch] += px[ch] as u64;
        }
    }
    let fill = Rgb([(sum[0] / n) as u8, (sum[1] / n) as u8, (sum[2] / n) as u8]);
    let small = image::imageops::resize(&guidance.image, nw, nh, image::imageops::FilterType::Triangle);
    let mut canvas = RgbImage::from_pixel(w, h, fill);
    image::imageops::replace(&mut canvas, &small, x0 as i64, y0 as i64);

    let place = |m: &Option<BitMask>| -> Result<Option<BitMask>> {
        let Some(m) = m else { return Ok(None) };
        let small = m.resize_nearest(nh as usize, nw as usize)?;
        let (x0, y0) = (x0 as usize, y0 as usize);
        let out = BitMask::from_fn(h as usize, w as usize, |r, c| {
            r >= y0 && c >= x0 && r < y0 + nh as usize && c < x0 + nw as usize && small.get(r - y0, c - x0)
        })?;
        Ok(Some(out))
    };
    ReferenceGuidance::new(canvas, place(&guidance.positive)?, place(&guidance.negative)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Degradation {
    /// Boundary subsampling interval.
    Polygon(usize),
    /// Linear scale of the reference object.
    Scale(f64),
}

impl Degradation {
    pub fn is_identity(&self) -> bool {
        match *self {
            Degradation::Polygon(k) => k <= 1,
            Degradation::Scale(s) => s == 1.0,
        }
    }

    pub fn apply(&self, guidance: &ReferenceGuidance) -> Result<ReferenceGuidance> {
        match *self {
            Degradation::Polygon(k) => {
                let map = |m: &Option<BitMask>| m.as_ref().map(|m| polygonize(m, k)).transpose();
                Ok(ReferenceGuidance {
                    image: guidance.image.clone(),
                    positive: map(&guidance.positive)?,
                    negative: map(&guidance.negative)?,
                })
            }
            Degradation::Scale(s) => downscale_reference(guidance, s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub degradation: Degradation,
    /// Pixel IoU between original and degraded positive reference masks,
    /// averaged over samples; 100 at the identity point.
    pub mask_fidelity: f64,
    pub report: NoCReport,
}

/// Evaluate `samples` once per degradation level.
pub fn sweep<M: Segmenter + ?Sized>(
    model: &M,
    samples: &[EvalSample],
    config: &EvalConfig,
    levels: &[Degradation],
) -> Result<Vec<SweepPoint>> {
    levels
        .iter()
        .map(|level| {
            let mut degraded = samples.to_vec();
            let mut fidelity = 0.0;
            for s in &mut degraded {
                let g = level.apply(&s.guidance)?;
                fidelity += match (&s.guidance.positive, &g.positive) {
                    (Some(a), Some(b)) if a.dims() == b.dims() => crate::maskops::iou(a, b)?,
                    _ => 1.0,
                };
                s.guidance = g;
            }
            let report = evaluate(model, &degraded, config)?;
            Ok(SweepPoint {
                degradation: *level,
                mask_fidelity: 100.0 * fidelity / samples.len().max(1) as f64,
                report,
            })
        })
        .collect()
}

/// `level,iou&1,noc@80,mask_fidelity` lines.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("level,iou&1,noc@80,mask_fidelity\n");
    for p in points {
        let level = match p.degradation {
            Degradation::Polygon(k) => format!("polygon:{k}"),
            Degradation::Scale(s) => format!("scale:{s}"),
        };
        out.push_str(&format!(
            "{level},{:.2},{:.2},{:.2}\n",
            p.report.iou_at_1, p.report.noc80, p.mask_fidelity
        ));
    }
    out
}
