//! Plain ViT encoder: pre-norm transformer blocks over a token grid.

use candle_core::{Module, Tensor, D};

use super::layers::{LayerNorm, Linear, Mlp};
use super::params::ParamStore;
use crate::error::Result;

struct Attention {
    qkv: Linear,
    proj: Linear,
    heads: usize,
    scale: f64,
}

impl Attention {
    fn new(ps: &mut ParamStore, dim: usize, heads: usize) -> Result<Self> {
        ps.scoped("attn", |ps| {
            Ok(Self {
                qkv: Linear::new(ps, "qkv", dim, 3 * dim)?,
                proj: Linear::new(ps, "proj", dim, dim)?,
                heads,
                scale: 1.0 / ((dim / heads) as f64).sqrt(),
            })
        })
    }

    fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        let (b, l, c) = xs.dims3()?;
        let hd = c / self.heads;
        let qkv = self
            .qkv
            .forward(xs)?
            .reshape((b, l, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * self.scale)?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, l, c))?;
        self.proj.forward(&out)
    }
}

struct Block {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    mlp: Mlp,
}

impl Block {
    fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        let xs = (xs + self.attn.forward(&self.norm1.forward(xs)?)?)?;
        &xs + self.mlp.forward(&self.norm2.forward(&xs)?)?
    }
}

/// Stack of transformer blocks. There is no trailing norm: with every
/// residual branch zeroed the backbone is the identity.
pub struct Backbone {
    blocks: Vec<Block>,
}

impl Backbone {
    pub fn new(ps: &mut ParamStore, dim: usize, depth: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| {
                ps.scoped(&format!("blocks.{i}"), |ps| {
                    Ok(Block {
                        norm1: LayerNorm::new(ps, "norm1", dim)?,
                        attn: Attention::new(ps, dim, heads)?,
                        norm2: LayerNorm::new(ps, "norm2", dim)?,
                        mlp: Mlp::new(ps, "mlp", dim, dim * mlp_ratio)?,
                    })
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    /// `[B, L, C] -> [B, L, C]`.
    pub fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        let mut xs = xs.clone();
        for block in &self.blocks {
            xs = block.forward(&xs)?;
        }
        Ok(xs)
    }
}
