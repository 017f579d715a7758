//! Click lists and the three-channel extra maps fed to the click embedding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskops::{BitMask, SoftMask};

/// Default disk radius in pixels at network input resolution.
pub const DEFAULT_DISK_RADIUS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// A user click; `order` is 1-based within a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Click {
    pub row: usize,
    pub col: usize,
    pub polarity: Polarity,
    pub order: usize,
}

impl Click {
    pub fn new(row: usize, col: usize, polarity: Polarity, order: usize) -> Self {
        Self {
            row,
            col,
            polarity,
            order,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.polarity == Polarity::Positive
    }
}

/// Binary disk map of every click with the given polarity, clipped at the
/// image border.
pub fn rasterize_disks(
    clicks: &[Click],
    polarity: Polarity,
    height: usize,
    width: usize,
    radius: usize,
) -> Result<BitMask> {
    let mut m = BitMask::new(height, width)?;
    let r2 = (radius * radius) as i64;
    for click in clicks.iter().filter(|c| c.polarity == polarity) {
        if click.row >= height || click.col >= width {
            return Err(Error::ClickOutOfBounds {
                row: click.row,
                col: click.col,
                height,
                width,
            });
        }
        let r0 = click.row.saturating_sub(radius);
        let r1 = (click.row + radius).min(height - 1);
        let c0 = click.col.saturating_sub(radius);
        let c1 = (click.col + radius).min(width - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let dr = r as i64 - click.row as i64;
                let dc = c as i64 - click.col as i64;
                if dr * dr + dc * dc <= r2 {
                    m.set(r, c, true);
                }
            }
        }
    }
    Ok(m)
}

/// Positive disks, negative disks and the previous prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraMaps {
    pub positive: BitMask,
    pub negative: BitMask,
    pub previous: SoftMask,
}

impl ExtraMaps {
    pub fn dims(&self) -> (usize, usize) {
        self.previous.dims()
    }

    /// Channel-major `[3, H, W]` values.
    pub fn to_planes(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(3 * self.positive.data().len());
        out.extend(self.positive.data().iter().map(|&v| v as f32));
        out.extend(self.negative.data().iter().map(|&v| v as f32));
        out.extend(self.previous.data().iter().map(|&v| v as f32));
        out
    }
}

pub fn assemble_extra_maps(clicks: &[Click], prev: &SoftMask, radius: usize) -> Result<ExtraMaps> {
    let (h, w) = prev.dims();
    Ok(ExtraMaps {
        positive: rasterize_disks(clicks, Polarity::Positive, h, w, radius)?,
        negative: rasterize_disks(clicks, Polarity::Negative, h, w, radius)?,
        previous: prev.clone(),
    })
}
