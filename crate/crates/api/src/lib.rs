//! JSON payloads of the session service.
//!
//! Masks travel as run-length strings (`"HxW:r0,r1,..."`, runs alternate
//! background/foreground starting with background, row-major). Images
//! travel as base64-encoded PNG. Every payload carries `api_version`.

use serde::{Deserialize, Serialize};

pub const API_VERSION: &str = "1";

/// Prompts set without a label are stored under this one.
pub const DEFAULT_LABEL: &str = "default";

fn version() -> String {
    API_VERSION.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub api_version: String,
    pub image_png: String,
    /// Ground-truth mask for scripted evaluation; enables `iou_with_gt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_rle: Option<String>,
}

impl CreateSessionRequest {
    pub fn new(image_png: String) -> Self {
        Self {
            api_version: version(),
            image_png,
            gt_rle: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub api_version: String,
    pub session_id: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetReferenceRequest {
    pub api_version: String,
    pub image_png: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_rle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_rle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl SetReferenceRequest {
    pub fn new(image_png: String, positive_rle: Option<String>, negative_rle: Option<String>) -> Self {
        Self {
            api_version: version(),
            image_png,
            positive_rle,
            negative_rle,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetReferenceResponse {
    pub api_version: String,
    pub label: String,
    /// Which prompts are non-zero.
    pub positive: bool,
    pub negative: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRequest {
    pub api_version: String,
    /// Row and column in original image pixels.
    pub row: u32,
    pub col: u32,
    pub polarity: Polarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl ClickRequest {
    pub fn new(row: u32, col: u32, polarity: Polarity) -> Self {
        Self {
            api_version: version(),
            row,
            col,
            polarity,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

/// A click as recorded by the server, in original image pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub row: u32,
    pub col: u32,
    pub polarity: Polarity,
    pub order: u32,
}

/// Current segmentation of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskResponse {
    pub api_version: String,
    /// Thresholded mask at the original resolution.
    pub mask_rle: String,
    /// Simplified outer and hole boundaries as `[x, y]` pixel-corner points.
    pub contours: Vec<Vec<[i32; 2]>>,
    pub clicks: Vec<ClickRecord>,
    /// Only present when the session knows a ground truth; never in live use.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou_with_gt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndoResponse {
    /// False when there was no click to undo.
    pub undone: bool,
    #[serde(flatten)]
    pub state: MaskResponse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeleteResponse {
    pub api_version: String,
    pub deleted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub input_size: u32,
    pub patch_size: u32,
    pub embed_dim: u32,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub api_version: String,
    pub status: String,
    pub sessions: u32,
    pub max_sessions: u32,
    pub model: ModelInfo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub api_version: String,
    /// Machine-readable kind, e.g. `not_found`.
    pub code: String,
    pub message: String,
}

impl ErrorResponse {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            api_version: version(),
            code: code.into(),
            message: message.into(),
        }
    }
}
