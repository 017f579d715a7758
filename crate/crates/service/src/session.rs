//! Per-session state. Everything here is synchronous; the HTTP layer
//! serializes access per session and runs the model calls on the blocking
//! pool.

use std::collections::HashMap;
use std::sync::Arc;

use image::RgbImage;
use refcut_api as api;
use refcut_core::clicks::{Click, Polarity};
use refcut_core::maskops::{iou, rle_encode, simplify_polygon, trace_contours, BitMask, SoftMask};
use refcut_core::model::{resize_image, RefCut};
use refcut_core::prompt::ReferencePrompts;
use refcut_core::robot::PRED_THRESHOLD;
use refcut_core::{Error, Result};

/// Douglas-Peucker tolerance for overlay contours, in original pixels.
pub const CONTOUR_TOLERANCE: f64 = 1.0;

#[derive(Clone)]
pub struct Session {
    /// Target image at network input size.
    input: Arc<RgbImage>,
    height: usize,
    width: usize,
    gt: Option<BitMask>,
    /// Clicks in network coordinates; `records` mirrors them in original ones.
    clicks: Vec<Click>,
    records: Vec<api::ClickRecord>,
    prev: SoftMask,
    /// `prev` as it was before each click, for undo.
    history: Vec<SoftMask>,
    prompts: HashMap<String, ReferencePrompts>,
}

/// What a click needs from the session; cheap to clone into a worker.
pub struct PendingClick {
    pub input: Arc<RgbImage>,
    pub clicks: Vec<Click>,
    pub prev: SoftMask,
    pub prompts: Option<ReferencePrompts>,
    record: api::ClickRecord,
}

impl Session {
    pub fn new(model: &RefCut, image: &RgbImage, gt: Option<BitMask>) -> Result<Self> {
        let (height, width) = (image.height() as usize, image.width() as usize);
        if let Some(g) = &gt {
            if g.dims() != (height, width) {
                return Err(Error::DimensionMismatch {
                    expected: (height, width),
                    actual: g.dims(),
                });
            }
        }
        let s = model.config().input_size;
        Ok(Self {
            input: Arc::new(resize_image(image, s)),
            height,
            width,
            gt,
            clicks: Vec::new(),
            records: Vec::new(),
            prev: SoftMask::zeros(s, s)?,
            history: Vec::new(),
            prompts: HashMap::new(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn clicks(&self) -> &[Click] {
        &self.clicks
    }

    pub fn prev(&self) -> &SoftMask {
        &self.prev
    }

    pub fn prompts(&self, label: &str) -> Option<&ReferencePrompts> {
        self.prompts.get(label)
    }

    /// Replaces any prompts stored under `label`.
    pub fn set_prompts(&mut self, label: String, prompts: ReferencePrompts) {
        self.prompts.insert(label, prompts);
    }

    /// Validate a click in original coordinates and map it to the network
    /// grid. A named label must have a reference; the default label may not.
    pub fn begin_click(&self, row: usize, col: usize, polarity: Polarity, label: Option<&str>) -> Result<PendingClick> {
        if row >= self.height || col >= self.width {
            return Err(Error::ClickOutOfBounds {
                row,
                col,
                height: self.height,
                width: self.width,
            });
        }
        let prompts = match label {
            None => self.prompts.get(api::DEFAULT_LABEL).cloned(),
            Some(l) => Some(
                self.prompts
                    .get(l)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("no reference set for label {l:?}")))?,
            ),
        };
        let s = self.prev.height();
        let order = self.clicks.len() + 1;
        let mut clicks = self.clicks.clone();
        clicks.push(Click::new(row * s / self.height, col * s / self.width, polarity, order));
        Ok(PendingClick {
            input: self.input.clone(),
            clicks,
            prev: self.prev.clone(),
            prompts,
            record: api::ClickRecord {
                row: row as u32,
                col: col as u32,
                polarity: wire_polarity(polarity),
                order: order as u32,
            },
        })
    }

    pub fn finish_click(&mut self, pending: PendingClick, pred: SoftMask) {
        self.history.push(std::mem::replace(&mut self.prev, pred));
        self.clicks = pending.clicks;
        self.records.push(pending.record);
    }

    /// Pops the last click; false when there is none.
    pub fn undo(&mut self) -> bool {
        match self.history.pop() {
            Some(prev) => {
                self.prev = prev;
                self.clicks.pop();
                self.records.pop();
                true
            }
            None => false,
        }
    }

    /// Drops clicks and the previous mask; references are kept.
    pub fn reset(&mut self) {
        let (h, w) = self.prev.dims();
        self.prev = SoftMask::zeros(h, w).expect("nonzero dims");
        self.clicks.clear();
        self.records.clear();
        self.history.clear();
    }

    /// Thresholded prediction at the original resolution.
    pub fn output_mask(&self) -> BitMask {
        self.prev
            .threshold(PRED_THRESHOLD)
            .resize_nearest(self.height, self.width)
            .expect("nonzero dims")
    }

    pub fn response(&self) -> Result<api::MaskResponse> {
        let mask = self.output_mask();
        let contours = trace_contours(&mask)
            .iter()
            .map(|ring| {
                simplify_polygon(ring, CONTOUR_TOLERANCE)
                    .into_iter()
                    .map(|p| [p.0, p.1])
                    .collect()
            })
            .collect();
        let iou_with_gt = match &self.gt {
            Some(gt) => Some(iou(&mask, gt)?),
            None => None,
        };
        Ok(api::MaskResponse {
            api_version: api::API_VERSION.to_string(),
            mask_rle: rle_encode(&mask),
            contours,
            clicks: self.records.clone(),
            iou_with_gt,
        })
    }
}

impl PendingClick {
    pub fn run(&self, model: &RefCut) -> Result<SoftMask> {
        model.predict_with_prompts(&self.input, &self.clicks, &self.prev, self.prompts.as_ref())
    }
}

pub fn core_polarity(p: api::Polarity) -> Polarity {
    match p {
        api::Polarity::Positive => Polarity::Positive,
        api::Polarity::Negative => Polarity::Negative,
    }
}

pub fn wire_polarity(p: Polarity) -> api::Polarity {
    match p {
        Polarity::Positive => api::Polarity::Positive,
        Polarity::Negative => api::Polarity::Negative,
    }
}
