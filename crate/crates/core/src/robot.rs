//! Simulated user and click metrics.
//!
//! The first click sits at the interior center of the target; every further
//! click sits at the interior center of the largest 4-connected component
//! of the error mask `threshold(pred) XOR gt`, positive when the clicked
//! pixel is foreground in the target.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clicks::{Click, Polarity};
use crate::error::{Error, Result};
use crate::maskops::{interior_center, iou, largest_component, BitMask, Connectivity, SoftMask};
use crate::model::{resize_image, RefCut};
use crate::prompt::{ReferenceGuidance, ReferencePrompts};
use crate::sampling::EvalSample;

pub const MAX_CLICKS: usize = 20;
pub const STOP_IOU: f64 = 0.90;
pub const PRED_THRESHOLD: f64 = 0.5;
pub const NOC_THRESHOLDS: [f64; 3] = [0.80, 0.85, 0.90];

pub fn first_click(gt: &BitMask) -> Result<Click> {
    let (row, col) = interior_center(gt)?;
    Ok(Click::new(row, col, Polarity::Positive, 1))
}

/// The error region a follow-up click responds to: largest 4-connected
/// component of `threshold(pred) XOR gt`.
pub fn error_region(pred: &SoftMask, gt: &BitMask) -> Result<BitMask> {
    let error = pred.threshold(PRED_THRESHOLD).xor(gt)?;
    if error.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(largest_component(&error, Connectivity::Four))
}

pub fn next_click(pred: &SoftMask, gt: &BitMask, prior: &[Click]) -> Result<Click> {
    let region = error_region(pred, gt)?;
    let (row, col) = interior_center(&region)?;
    let polarity = if gt.get(row, col) {
        Polarity::Positive
    } else {
        Polarity::Negative
    };
    let order = prior.last().map_or(1, |c| c.order + 1);
    Ok(Click::new(row, col, polarity, order))
}

/// Anything that maps clicks and a previous prediction to a new prediction
/// at the image's resolution.
pub trait Segmenter: Sync {
    type Prompts: Send + Sync;

    fn prepare(&self, guidance: Option<&ReferenceGuidance>) -> Result<Self::Prompts>;

    fn segment(
        &self,
        image: &RgbImage,
        clicks: &[Click],
        prev: &SoftMask,
        prompts: &Self::Prompts,
    ) -> Result<SoftMask>;
}

impl Segmenter for RefCut {
    type Prompts = ReferencePrompts;

    fn prepare(&self, guidance: Option<&ReferenceGuidance>) -> Result<ReferencePrompts> {
        match guidance {
            Some(g) => self.generate_prompts(g),
            None => self.zero_prompts(),
        }
    }

    /// Images of another size are resized to the input resolution; clicks
    /// and `prev` are mapped down and the prediction is mapped back up.
    fn segment(
        &self,
        image: &RgbImage,
        clicks: &[Click],
        prev: &SoftMask,
        prompts: &ReferencePrompts,
    ) -> Result<SoftMask> {
        let s = self.config().input_size;
        let (h, w) = (image.height() as usize, image.width() as usize);
        if (h, w) == (s, s) {
            return self.predict_with_prompts(image, clicks, prev, Some(prompts));
        }
        let small = resize_image(image, s);
        let mapped: Vec<Click> = clicks
            .iter()
            .map(|c| Click {
                row: (c.row * s / h).min(s - 1),
                col: (c.col * s / w).min(s - 1),
                ..*c
            })
            .collect();
        let prev_small = resample_soft(prev, s, s)?;
        let out = self.predict_with_prompts(&small, &mapped, &prev_small, Some(prompts))?;
        resample_soft(&out, h, w)
    }
}

/// Nearest-neighbour resampling of a soft mask.
pub fn resample_soft(m: &SoftMask, height: usize, width: usize) -> Result<SoftMask> {
    let (h, w) = m.dims();
    if (h, w) == (height, width) {
        return Ok(m.clone());
    }
    let mut data = Vec::with_capacity(height * width);
    for r in 0..height {
        let sr = r * h / height;
        for c in 0..width {
            data.push(m.get(sr, c * w / width));
        }
    }
    SoftMask::from_vec(height, width, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub sample_id: String,
    pub ious: Vec<f64>,
    pub clicks: Vec<Click>,
}

impl SessionTrace {
    /// Clicks needed to reach `threshold`, or `cap` when never reached.
    pub fn clicks_to(&self, threshold: f64, cap: usize) -> usize {
        self.ious
            .iter()
            .position(|&v| v >= threshold)
            .map_or(cap, |i| i + 1)
    }
}

/// One evaluation session: prompts are computed once, then clicks are
/// issued until the IoU reaches `stop_iou` or `max_clicks` is exhausted.
pub fn run_session<M: Segmenter + ?Sized>(
    model: &M,
    sample_id: &str,
    image: &RgbImage,
    gt: &BitMask,
    guidance: Option<&ReferenceGuidance>,
    max_clicks: usize,
    stop_iou: f64,
) -> Result<SessionTrace> {
    let prompts = model.prepare(guidance)?;
    let (h, w) = gt.dims();
    let mut prev = SoftMask::zeros(h, w)?;
    let mut clicks = Vec::new();
    let mut ious = Vec::new();
    while clicks.len() < max_clicks {
        let click = if clicks.is_empty() {
            first_click(gt)?
        } else {
            next_click(&prev, gt, &clicks)?
        };
        clicks.push(click);
        prev = model.segment(image, &clicks, &prev, &prompts)?;
        let score = iou(&prev.threshold(PRED_THRESHOLD), gt)?;
        ious.push(score);
        if score >= stop_iou {
            break;
        }
    }
    Ok(SessionTrace {
        sample_id: sample_id.to_string(),
        ious,
        clicks,
    })
}

/// Mean clicks to reach `threshold`, failures counted as `MAX_CLICKS`.
pub fn noc(traces: &[SessionTrace], threshold: f64) -> f64 {
    noc_capped(traces, threshold, MAX_CLICKS)
}

pub fn noc_capped(traces: &[SessionTrace], threshold: f64, cap: usize) -> f64 {
    if traces.is_empty() {
        return f64::NAN;
    }
    let total: usize = traces.iter().map(|t| t.clicks_to(threshold, cap)).sum();
    total as f64 / traces.len() as f64
}

/// Which reference masks are shown to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    None,
    PositiveOnly,
    NegativeOnly,
    Both,
}

impl GuidanceMode {
    pub const ALL: [GuidanceMode; 4] = [
        GuidanceMode::None,
        GuidanceMode::PositiveOnly,
        GuidanceMode::NegativeOnly,
        GuidanceMode::Both,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GuidanceMode::None => "none",
            GuidanceMode::PositiveOnly => "pos",
            GuidanceMode::NegativeOnly => "neg",
            GuidanceMode::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown guidance mode {s:?} (none|pos|neg|both)")))
    }

    pub fn apply(self, guidance: &ReferenceGuidance) -> Option<ReferenceGuidance> {
        let (pos, neg) = match self {
            GuidanceMode::None => return None,
            GuidanceMode::PositiveOnly => (true, false),
            GuidanceMode::NegativeOnly => (false, true),
            GuidanceMode::Both => (true, true),
        };
        Some(ReferenceGuidance {
            image: guidance.image.clone(),
            positive: guidance.positive.clone().filter(|_| pos),
            negative: guidance.negative.clone().filter(|_| neg),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub max_clicks: usize,
    pub stop_iou: f64,
    pub mode: GuidanceMode,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_clicks: MAX_CLICKS,
            stop_iou: STOP_IOU,
            mode: GuidanceMode::Both,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failures {
    pub at80: usize,
    pub at85: usize,
    pub at90: usize,
}

/// How the report was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub click_center: String,
    pub error_connectivity: String,
    pub pred_threshold: f64,
    pub max_clicks: usize,
    pub stop_iou: f64,
    pub guidance: GuidanceMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoCReport {
    pub noc80: f64,
    pub noc85: f64,
    pub noc90: f64,
    /// Mean IoU after the first click, in percent.
    pub iou_at_1: f64,
    pub failures: Failures,
    pub n_samples: usize,
    pub metadata: ReportMetadata,
    pub traces: Vec<SessionTrace>,
}

impl NoCReport {
    pub fn from_traces(traces: Vec<SessionTrace>, config: &EvalConfig) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::Sampling("no evaluation samples".into()));
        }
        let cap = MAX_CLICKS;
        let fails = |thr: f64| traces.iter().filter(|t| t.clicks_to(thr, usize::MAX) == usize::MAX).count();
        let iou1 = traces.iter().map(|t| t.ious[0]).sum::<f64>() / traces.len() as f64;
        Ok(Self {
            noc80: noc_capped(&traces, NOC_THRESHOLDS[0], cap),
            noc85: noc_capped(&traces, NOC_THRESHOLDS[1], cap),
            noc90: noc_capped(&traces, NOC_THRESHOLDS[2], cap),
            iou_at_1: 100.0 * iou1,
            failures: Failures {
                at80: fails(NOC_THRESHOLDS[0]),
                at85: fails(NOC_THRESHOLDS[1]),
                at90: fails(NOC_THRESHOLDS[2]),
            },
            n_samples: traces.len(),
            metadata: ReportMetadata {
                click_center: "distance_transform".into(),
                error_connectivity: "4".into(),
                pred_threshold: PRED_THRESHOLD,
                max_clicks: config.max_clicks,
                stop_iou: config.stop_iou,
                guidance: config.mode,
            },
            traces,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub const CSV_HEADER: &'static str = "guidance,n,noc@80,noc@85,noc@90,iou&1";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.2},{:.2},{:.2},{:.2}",
            self.metadata.guidance.name(),
            self.n_samples,
            self.noc80,
            self.noc85,
            self.noc90,
            self.iou_at_1
        )
    }
}

/// Run every sample, in parallel when `workers != 1`; traces keep the
/// sample order so the report does not depend on scheduling.
pub fn evaluate<M: Segmenter + ?Sized>(
    model: &M,
    samples: &[EvalSample],
    config: &EvalConfig,
) -> Result<NoCReport> {
    if samples.is_empty() {
        return Err(Error::Sampling("no evaluation samples".into()));
    }
    let run = |s: &EvalSample| {
        let guidance = config.mode.apply(&s.guidance);
        run_session(
            model,
            &s.id(),
            &s.image,
            &s.gt,
            guidance.as_ref(),
            config.max_clicks,
            config.stop_iou,
        )
    };
    let traces: Result<Vec<SessionTrace>> = if config.workers == 1 {
        samples.iter().map(run).collect()
    } else if config.workers == 0 {
        samples.par_iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| samples.par_iter().map(run).collect())
    };
    NoCReport::from_traces(traces?, config)
}
