use serde::{Deserialize, Serialize};

use crate::clicks::DEFAULT_DISK_RADIUS;
use crate::error::{Error, Result};

/// Network geometry. The default is a desk-scale ViT with the same topology
/// as ViT-B, so scaling up is a matter of changing these numbers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Side of the square network input, in pixels.
    pub input_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Channel width of the feature pyramid and segmentation head.
    pub decoder_dim: usize,
    /// Hidden width of the reference prompt MLPs.
    pub prompt_hidden: usize,
    pub disk_radius: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 224,
            patch_size: 16,
            embed_dim: 96,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            decoder_dim: 32,
            prompt_hidden: 96,
            disk_radius: DEFAULT_DISK_RADIUS,
        }
    }
}

impl ModelConfig {
    /// The default network at 128-pixel input (an 8×8 token grid).
    pub fn compact() -> Self {
        Self {
            input_size: 128,
            ..Self::default()
        }
    }

    /// ViT-B geometry, for use with pretrained weights.
    pub fn vit_base() -> Self {
        Self {
            input_size: 448,
            patch_size: 16,
            embed_dim: 768,
            depth: 12,
            heads: 12,
            mlp_ratio: 4,
            decoder_dim: 256,
            prompt_hidden: 768,
            disk_radius: DEFAULT_DISK_RADIUS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.patch_size == 0 || self.input_size == 0 {
            return bad("input_size and patch_size must be positive".into());
        }
        if self.input_size % self.patch_size != 0 {
            return bad(format!(
                "input_size {} not divisible by patch_size {}",
                self.input_size, self.patch_size
            ));
        }
        if self.patch_size % 4 != 0 {
            return bad(format!("patch_size {} must be a multiple of 4", self.patch_size));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.depth == 0 || self.decoder_dim == 0 || self.prompt_hidden == 0 || self.mlp_ratio == 0 {
            return bad("depth, decoder_dim, prompt_hidden and mlp_ratio must be positive".into());
        }
        Ok(())
    }

    /// Token grid side `H' = input_size / patch_size`.
    pub fn grid(&self) -> usize {
        self.input_size / self.patch_size
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.tokens(), 196);
        ModelConfig::vit_base().validate().unwrap();
    }

    #[test]
    fn rejects_bad_geometry() {
        let c = ModelConfig {
            input_size: 100,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            heads: 5,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
