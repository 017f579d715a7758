//! Reference prompt generation.
//!
//! Backbone features of the reference image are pooled under each reference
//! mask (a weighted average, with the mask area-downsampled to the token
//! grid) and the pooled vectors are encoded by two MLPs of identical shape
//! but separate parameters, one per polarity. The resulting prompt vectors
//! are added to every embedded token of the target image.

use candle_core::{DType, Module, Tensor, D};
use image::RgbImage;

use crate::clicks::Polarity;
use crate::error::{Error, Result};
use crate::maskops::{downsample_area, BitMask, SoftMask};
use crate::model::layers::Linear;
use crate::model::params::ParamStore;

/// Reference image with optional positive and negative masks. An empty mask
/// is equivalent to a missing one.
#[derive(Debug, Clone)]
pub struct ReferenceGuidance {
    pub image: RgbImage,
    pub positive: Option<BitMask>,
    pub negative: Option<BitMask>,
}

impl ReferenceGuidance {
    pub fn new(image: RgbImage, positive: Option<BitMask>, negative: Option<BitMask>) -> Result<Self> {
        let dims = (image.height() as usize, image.width() as usize);
        for m in positive.iter().chain(negative.iter()) {
            if m.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: m.dims(),
                });
            }
        }
        Ok(Self {
            image,
            positive,
            negative,
        })
    }

    pub fn mask(&self, polarity: Polarity) -> Option<&BitMask> {
        match polarity {
            Polarity::Positive => self.positive.as_ref(),
            Polarity::Negative => self.negative.as_ref(),
        }
        .filter(|m| !m.is_empty())
    }

    pub fn has_positive(&self) -> bool {
        self.mask(Polarity::Positive).is_some()
    }

    pub fn has_negative(&self) -> bool {
        self.mask(Polarity::Negative).is_some()
    }
}

/// Reference features reshaped to the token grid, `[H', W', C]`.
#[derive(Debug, Clone)]
pub struct GridFeature(pub Tensor);

impl GridFeature {
    pub fn dims(&self) -> Result<(usize, usize, usize)> {
        Ok(self.0.dims3()?)
    }
}

/// Encoded prompt for one polarity, a `[C]` vector.
#[derive(Debug, Clone)]
pub struct PromptVector {
    pub polarity: Polarity,
    pub values: Tensor,
}

impl PromptVector {
    pub fn zeros(polarity: Polarity, dim: usize, dtype: DType) -> Result<Self> {
        Ok(Self {
            polarity,
            values: Tensor::zeros(dim, dtype, &candle_core::Device::Cpu)?,
        })
    }

    pub fn to_vec(&self) -> Result<Vec<f64>> {
        Ok(self.values.to_dtype(DType::F64)?.to_vec1::<f64>()?)
    }

    pub fn is_zero(&self) -> Result<bool> {
        Ok(self.to_vec()?.iter().all(|&v| v == 0.0))
    }
}

/// Positive and negative prompt vectors for one reference.
#[derive(Debug, Clone)]
pub struct ReferencePrompts {
    pub positive: PromptVector,
    pub negative: PromptVector,
}

/// Masked average of features: `Σ f·m / Σ m` per channel, or the zero
/// vector where `Σ m == 0`.
///
/// `features` is `[B, L, C]` and `weights` is `[B, L]`; returns `[B, C]`.
pub fn masked_representation(features: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let (b, l, _) = features.dims3()?;
    if weights.dims() != [b, l] {
        return Err(Error::Shape(format!(
            "weights {:?} do not match features {:?}",
            weights.dims(),
            features.dims()
        )));
    }
    let num = features.broadcast_mul(&weights.unsqueeze(2)?)?.sum(1)?;
    let den = weights.sum_keepdim(1)?;
    // Exactly 1 where the mask is empty; the numerator is then 0.
    let den = (&den + den.eq(0.0)?.to_dtype(den.dtype())?)?;
    Ok(num.broadcast_div(&den)?)
}

/// `masked_representation` on a single grid and soft mask of the same
/// spatial size.
pub fn masked_representation_grid(feature: &GridFeature, mask: &SoftMask) -> Result<Tensor> {
    let (h, w, c) = feature.dims()?;
    if mask.dims() != (h, w) {
        return Err(Error::DimensionMismatch {
            expected: (h, w),
            actual: mask.dims(),
        });
    }
    let f = feature.0.reshape((1, h * w, c))?;
    let m = Tensor::from_slice(mask.data(), (1, h * w), f.device())?.to_dtype(f.dtype())?;
    Ok(masked_representation(&f, &m)?.squeeze(0)?)
}

/// Area-downsampled mask weights on the token grid, flattened to `[L]`.
/// A missing or empty mask yields all zeros.
pub fn mask_weights(mask: Option<&BitMask>, input_size: usize, patch_size: usize) -> Result<Vec<f64>> {
    let grid = input_size / patch_size;
    match mask {
        Some(m) if !m.is_empty() => {
            let m = if m.dims() != (input_size, input_size) {
                m.resize_nearest(input_size, input_size)?
            } else {
                m.clone()
            };
            Ok(downsample_area(&m, patch_size)?.data().to_vec())
        }
        _ => Ok(vec![0.0; grid * grid]),
    }
}

/// Two-layer MLP mapping a pooled representation to a prompt vector.
pub struct PromptEncoder {
    fc1: Linear,
    fc2: Linear,
}

impl PromptEncoder {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        ps.scoped(name, |ps| {
            Ok(Self {
                fc1: Linear::new(ps, "fc1", dim, hidden)?,
                fc2: Linear::new(ps, "fc2", hidden, dim)?,
            })
        })
    }

    /// `[B, C] -> [B, C]`.
    pub fn forward(&self, r: &Tensor) -> Result<Tensor> {
        Ok(self.fc2.forward(&self.fc1.forward(r)?.gelu_erf()?)?)
    }
}

/// Both polarity encoders.
pub struct PromptGenerator {
    pub positive: PromptEncoder,
    pub negative: PromptEncoder,
}

impl PromptGenerator {
    pub fn new(ps: &mut ParamStore, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            positive: PromptEncoder::new(ps, "prompt_pos", dim, hidden)?,
            negative: PromptEncoder::new(ps, "prompt_neg", dim, hidden)?,
        })
    }

    pub fn encoder(&self, polarity: Polarity) -> &PromptEncoder {
        match polarity {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
        }
    }

    /// Batched prompts: pooled features under `weights` (`[B, L]`), encoded,
    /// then zeroed for rows whose mask is empty.
    pub fn batch_prompts(&self, features: &Tensor, weights: &Tensor, polarity: Polarity) -> Result<Tensor> {
        let r = masked_representation(features, weights)?;
        let p = self.encoder(polarity).forward(&r)?;
        let present = weights.sum_keepdim(D::Minus1)?.ne(0.0)?.to_dtype(p.dtype())?;
        Ok(p.broadcast_mul(&present)?)
    }
}
