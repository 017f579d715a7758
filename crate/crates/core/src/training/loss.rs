//! Normalized focal loss.
//!
//! Per map: `Σ (1-pₜ)^γ · (-log pₜ) / Σ (1-pₜ)^γ`, where `pₜ` is the
//! probability assigned to the true label. The normalizer is part of the
//! differentiated expression. Batches average the per-map losses.

use candle_core::{DType, Tensor};

use crate::error::{Error, Result};
use crate::maskops::{BitMask, SoftMask};

/// Probabilities are clamped to `[EPS, 1 - EPS]`.
pub const EPS: f64 = 1e-7;

pub fn normalized_focal_loss(pred: &SoftMask, gt: &BitMask, gamma: f64) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            actual: pred.dims(),
        });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (&p, &y) in pred.data().iter().zip(gt.data()) {
        let p = p.clamp(EPS, 1.0 - EPS);
        let pt = if y == 1 { p } else { 1.0 - p };
        let w = (1.0 - pt).powf(gamma);
        num += w * -pt.ln();
        den += w;
    }
    Ok(num / den)
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: &Tensor) -> candle_core::Result<Tensor> {
    x.relu()? + (x.abs()?.neg()?.exp()? + 1.0)?.log()?
}

/// Batched loss on logits `[B, H, W]` against targets `[B, H, W]` in {0, 1};
/// returns a scalar tensor.
pub fn focal_loss_logits(logits: &Tensor, gt: &Tensor, gamma: f64) -> Result<Tensor> {
    if logits.dims() != gt.dims() || logits.rank() != 3 {
        return Err(Error::Shape(format!(
            "logits {:?} vs targets {:?}, expected matching [B, H, W]",
            logits.dims(),
            gt.dims()
        )));
    }
    let gt = gt.to_dtype(logits.dtype())?;
    // Sign +1 for foreground, -1 for background: log pₜ = -softplus(-s·z).
    let sign = ((&gt * 2.0)? - 1.0)?;
    let neg_log_pt = softplus(&(&sign * logits)?.neg()?)?;
    let weight = if gamma == 0.0 {
        neg_log_pt.ones_like()?
    } else {
        let one_minus_pt = (1.0 - neg_log_pt.neg()?.exp()?)?;
        if gamma == 2.0 {
            one_minus_pt.sqr()?
        } else {
            one_minus_pt.powf(gamma)?
        }
    };
    let num = (&weight * &neg_log_pt)?.sum((1, 2))?;
    let den = (weight.sum((1, 2))? + 1e-12)?;
    Ok((num / den)?.mean_all()?)
}

/// Targets tensor `[B, H, W]` from masks.
pub fn target_tensor(masks: &[&BitMask], dtype: DType) -> Result<Tensor> {
    let (h, w) = masks.first().map(|m| m.dims()).ok_or(Error::EmptyMask)?;
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if m.dims() != (h, w) {
            return Err(Error::DimensionMismatch {
                expected: (h, w),
                actual: m.dims(),
            });
        }
        data.extend(m.data().iter().map(|&v| v as f32));
    }
    Ok(Tensor::from_vec(data, (masks.len(), h, w), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}
