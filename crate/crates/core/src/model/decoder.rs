//! Simple feature pyramid over the final token grid plus a light
//! segmentation head.
//!
//! Pyramid levels sit at strides 16, 8 and 4 relative to the input (for a
//! 16-pixel patch). Upsampling uses learned depth-to-space projections,
//! equivalent to stride-2 transposed convolutions with 2×2 kernels.

use candle_core::{Module, Tensor};

use super::layers::{pixel_shuffle, upsample_nearest, LayerNorm, Linear};
use super::params::{Init, ParamStore};
use crate::error::Result;

pub struct Decoder {
    norm: LayerNorm,
    level1: Linear,
    level2_up: Linear,
    level2: Linear,
    level4_up_a: Linear,
    level4_up_b: Linear,
    fuse_kernel: Tensor,
    fuse_bias: Tensor,
    head: Linear,
    head_factor: usize,
}

impl Decoder {
    pub fn new(ps: &mut ParamStore, embed_dim: usize, dim: usize, patch_size: usize) -> Result<Self> {
        let head_factor = patch_size / 4;
        ps.scoped("decoder", |ps| {
            Ok(Self {
                norm: LayerNorm::new(ps, "norm", embed_dim)?,
                level1: Linear::new(ps, "level1", embed_dim, dim)?,
                level2_up: Linear::new(ps, "level2_up", embed_dim, 4 * dim)?,
                level2: Linear::new(ps, "level2", dim, dim)?,
                level4_up_a: Linear::new(ps, "level4_up_a", embed_dim, 4 * dim)?,
                level4_up_b: Linear::new(ps, "level4_up_b", dim, 4 * dim)?,
                fuse_kernel: ps.get(
                    "fuse.weight",
                    (dim, dim, 3, 3),
                    Init::Xavier {
                        fan_in: 9 * dim,
                        fan_out: 9 * dim,
                    },
                )?,
                fuse_bias: ps.get("fuse.bias", dim, Init::Zeros)?,
                head: Linear::new(ps, "head", dim, head_factor * head_factor)?,
                head_factor,
            })
        })
    }

    /// Token grid `[B, H', W', C]` to logits `[B, H, W]`.
    pub fn logits(&self, grid: &Tensor) -> candle_core::Result<Tensor> {
        let x = self.norm.forward(grid)?;

        let l1 = self.level1.forward(&x)?;
        let l2 = pixel_shuffle(&self.level2_up.forward(&x)?, 2)?.gelu_erf()?;
        let l2 = self.level2.forward(&l2)?;
        let l4 = pixel_shuffle(&self.level4_up_a.forward(&x)?, 2)?.gelu_erf()?;
        let l4 = pixel_shuffle(&self.level4_up_b.forward(&l4)?, 2)?;

        let fused = ((upsample_nearest(&l1, 4)? + upsample_nearest(&l2, 2)?)? + l4)?.gelu_erf()?;
        // 3x3 conv runs channels-first.
        let conv = fused
            .permute((0, 3, 1, 2))?
            .contiguous()?
            .conv2d(&self.fuse_kernel, 1, 1, 1, 1)?
            .broadcast_add(&self.fuse_bias.reshape((1, (), 1, 1))?)?
            .permute((0, 2, 3, 1))?
            .gelu_erf()?;
        let conv = (conv + fused)?;
        let out = pixel_shuffle(&self.head.forward(&conv)?, self.head_factor)?;
        out.squeeze(3)
    }
}
