//! Differentiable building blocks composed from primitive tensor ops so that
//! every layer supports backpropagation in both f32 and f64.

use candle_core::{Module, Tensor, D};

use super::params::{Init, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Self::with_init(ps, name, fan_in, fan_out, Init::Xavier { fan_in, fan_out })
    }

    pub fn with_init(
        ps: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: Init,
    ) -> Result<Self> {
        ps.scoped(name, |ps| {
            Ok(Self {
                weight: ps.get("weight", (fan_in, fan_out), init)?,
                bias: ps.get("bias", fan_out, Init::Zeros)?,
            })
        })
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }
}

impl Module for Linear {
    /// Applies to the last dimension of an input of any rank.
    fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        let dims = xs.dims();
        let (rows, fan_in) = (xs.elem_count() / dims[dims.len() - 1], dims[dims.len() - 1]);
        let flat = xs.reshape((rows, fan_in))?;
        let out = flat.matmul(&self.weight)?.broadcast_add(&self.bias)?;
        let mut shape = dims.to_vec();
        *shape.last_mut().unwrap() = self.weight.dim(1)?;
        out.reshape(shape)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        ps.scoped(name, |ps| {
            Ok(Self {
                weight: ps.get("weight", dim, Init::Ones)?,
                bias: ps.get("bias", dim, Init::Zeros)?,
                eps: 1e-6,
            })
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        let mean = xs.mean_keepdim(D::Minus1)?;
        let centered = xs.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

/// Two linear layers with a GELU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        ps.scoped(name, |ps| {
            Ok(Self {
                fc1: Linear::new(ps, "fc1", dim, hidden)?,
                fc2: Linear::new(ps, "fc2", hidden, dim)?,
            })
        })
    }
}

impl Module for Mlp {
    fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(xs)?.gelu_erf()?)
    }
}

/// Depth-to-space on channels-last input: `[B, H, W, f*f*C] -> [B, H*f, W*f, C]`.
pub fn pixel_shuffle(xs: &Tensor, factor: usize) -> candle_core::Result<Tensor> {
    let (b, h, w, c) = xs.dims4()?;
    let out_c = c / (factor * factor);
    xs.reshape((b, h, w, factor, factor, out_c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b, h * factor, w * factor, out_c))
}

/// Nearest-neighbour upsampling on channels-last input.
pub fn upsample_nearest(xs: &Tensor, factor: usize) -> candle_core::Result<Tensor> {
    if factor == 1 {
        return Ok(xs.clone());
    }
    let (b, h, w, c) = xs.dims4()?;
    xs.reshape((b, h, 1, w, 1, c))?
        .broadcast_as((b, h, factor, w, factor, c))?
        .contiguous()?
        .reshape((b, h * factor, w * factor, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn pixel_shuffle_layout() -> Result<()> {
        // one 1x1 cell with 4 channels -> 2x2 single-channel block, row-major
        let x = Tensor::new(&[1f32, 2., 3., 4.], &Device::Cpu)?.reshape((1, 1, 1, 4))?;
        let y = pixel_shuffle(&x, 2)?;
        assert_eq!(y.dims(), &[1, 2, 2, 1]);
        assert_eq!(y.flatten_all()?.to_vec1::<f32>()?, vec![1., 2., 3., 4.]);
        Ok(())
    }

    #[test]
    fn upsample_repeats() -> Result<()> {
        let x = Tensor::new(&[1f32, 2.], &Device::Cpu)?.reshape((1, 1, 2, 1))?;
        let y = upsample_nearest(&x, 2)?;
        assert_eq!(y.flatten_all()?.to_vec1::<f32>()?, vec![1., 1., 2., 2., 1., 1., 2., 2.]);
        Ok(())
    }

    #[test]
    fn layer_norm_normalizes() -> Result<()> {
        let mut ps = ParamStore::new(0, DType::F64, Device::Cpu);
        let ln = LayerNorm::new(&mut ps, "ln", 4)?;
        let x = Tensor::new(&[[1f64, 2., 3., 10.]], &Device::Cpu)?;
        let y = ln.forward(&x)?.to_vec2::<f64>()?;
        let mean: f64 = y[0].iter().sum::<f64>() / 4.0;
        let var: f64 = y[0].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
        Ok(())
    }
}
