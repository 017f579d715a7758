//! The click-conditioned segmentation network.
//!
//! Target branch: image patches and click/previous-mask patches are embedded
//! separately and summed, the reference prompts are broadcast-added to every
//! token, and the result runs through the ViT backbone and the pyramid
//! decoder. Reference branch: the reference image goes through the same
//! image embedding and backbone, without the click embedding.

mod backbone;
pub mod checkpoint;
mod config;
mod decoder;
pub mod layers;
pub mod params;

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::RwLock;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::VarMap;
use image::RgbImage;

pub use backbone::Backbone;
pub use config::ModelConfig;
pub use decoder::Decoder;

use crate::clicks::{assemble_extra_maps, Click, ExtraMaps, Polarity};
use crate::error::{Error, Result};
use crate::maskops::SoftMask;
use crate::prompt::{
    mask_weights, GridFeature, PromptGenerator, PromptVector, ReferenceGuidance, ReferencePrompts,
};
use layers::Linear;
use params::{Init, ParamStore};

/// Per-channel normalisation applied to RGB input.
const PIXEL_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const PIXEL_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Parameter groups, by name prefix.
pub const PARAM_GROUPS: [&str; 6] = [
    "embed_img",
    "embed_ext",
    "backbone",
    "decoder",
    "prompt_pos",
    "prompt_neg",
];

/// Token grid `[B, L, C]` with `L = grid_h · grid_w`.
#[derive(Debug, Clone)]
pub struct TokenFeature {
    pub tokens: Tensor,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl TokenFeature {
    fn with_tokens(&self, tokens: Tensor) -> Self {
        Self {
            tokens,
            grid_h: self.grid_h,
            grid_w: self.grid_w,
        }
    }
}

pub struct RefCut {
    config: ModelConfig,
    varmap: VarMap,
    dtype: DType,
    device: Device,
    embed_img: Linear,
    pos_embed: Tensor,
    embed_ext: Linear,
    backbone: Backbone,
    decoder: Decoder,
    prompts: PromptGenerator,
    reference_cache: RwLock<HashMap<u64, Tensor>>,
}

impl RefCut {
    pub fn new(config: ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let mut ps = ParamStore::new(seed, dtype, device.clone());
        let (c, p) = (config.embed_dim, config.patch_size);
        let patch_dim = 3 * p * p;

        let (embed_img, pos_embed) = ps.scoped("embed_img", |ps| {
            Ok((
                Linear::new(ps, "proj", patch_dim, c)?,
                ps.get("pos_embed", (1, config.tokens(), c), Init::Normal(0.02))?,
            ))
        })?;
        let embed_ext = ps.scoped("embed_ext", |ps| Linear::new(ps, "proj", patch_dim, c))?;
        let backbone = ps.scoped("backbone", |ps| {
            Backbone::new(ps, c, config.depth, config.heads, config.mlp_ratio)
        })?;
        let decoder = Decoder::new(&mut ps, c, config.decoder_dim, p)?;
        let prompts = PromptGenerator::new(&mut ps, c, config.prompt_hidden)?;

        Ok(Self {
            config,
            varmap: ps.into_varmap(),
            dtype,
            device,
            embed_img,
            pos_embed,
            embed_ext,
            backbone,
            decoder,
            prompts,
            reference_cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn prompt_generator(&self) -> &PromptGenerator {
        &self.prompts
    }

    /// `[B, 3, H, W]` normalised image batch. Images must already be at
    /// input resolution.
    pub fn image_tensor(&self, images: &[&RgbImage]) -> Result<Tensor> {
        let s = self.config.input_size;
        let mut data = Vec::with_capacity(images.len() * 3 * s * s);
        for img in images {
            let dims = (img.height() as usize, img.width() as usize);
            if dims != (s, s) {
                return Err(Error::DimensionMismatch {
                    expected: (s, s),
                    actual: dims,
                });
            }
            for ch in 0..3 {
                data.extend(
                    img.pixels()
                        .map(|px| (px[ch] as f32 / 255.0 - PIXEL_MEAN[ch]) / PIXEL_STD[ch]),
                );
            }
        }
        Ok(Tensor::from_vec(data, (images.len(), 3, s, s), &self.device)?.to_dtype(self.dtype)?)
    }

    /// `[B, 3, H, W]` batch of extra maps.
    pub fn extras_tensor(&self, extras: &[&ExtraMaps]) -> Result<Tensor> {
        let s = self.config.input_size;
        let mut data = Vec::with_capacity(extras.len() * 3 * s * s);
        for e in extras {
            if e.dims() != (s, s) {
                return Err(Error::DimensionMismatch {
                    expected: (s, s),
                    actual: e.dims(),
                });
            }
            data.extend(e.to_planes());
        }
        Ok(Tensor::from_vec(data, (extras.len(), 3, s, s), &self.device)?.to_dtype(self.dtype)?)
    }

    /// `[B, 3, H, W] -> [B, L, 3·p·p]`, patches in row-major grid order.
    fn patchify(&self, x: &Tensor) -> Result<Tensor> {
        let (b, ch, h, w) = x.dims4()?;
        let s = self.config.input_size;
        if (h, w) != (s, s) || ch != 3 {
            return Err(Error::Shape(format!(
                "expected [B, 3, {s}, {s}] input, got {:?}",
                x.dims()
            )));
        }
        let p = self.config.patch_size;
        let g = s / p;
        Ok(x.reshape((b, 3, g, p, g, p))?
            .permute((0, 2, 4, 1, 3, 5))?
            .contiguous()?
            .reshape((b, g * g, 3 * p * p))?)
    }

    fn tokens(&self, tokens: Tensor) -> TokenFeature {
        let g = self.config.grid();
        TokenFeature {
            tokens,
            grid_h: g,
            grid_w: g,
        }
    }

    /// Image patch embedding plus learned positional encoding.
    pub fn embed_image(&self, images: &Tensor) -> Result<TokenFeature> {
        let x = self.embed_img.forward(&self.patchify(images)?)?;
        Ok(self.tokens(x.broadcast_add(&self.pos_embed)?))
    }

    /// Patch embedding of the click disks and previous prediction.
    pub fn embed_extras(&self, extras: &Tensor) -> Result<TokenFeature> {
        Ok(self.tokens(self.embed_ext.forward(&self.patchify(extras)?)?))
    }

    /// Token-wise `img + extra + p_pos + p_neg`, prompts broadcast over all
    /// tokens. Prompts are `[C]` or `[B, C]`.
    pub fn fuse(
        &self,
        img: &TokenFeature,
        extra: &TokenFeature,
        p_pos: &Tensor,
        p_neg: &Tensor,
    ) -> Result<TokenFeature> {
        if img.tokens.dims() != extra.tokens.dims() {
            return Err(Error::Shape(format!(
                "image tokens {:?} vs extra tokens {:?}",
                img.tokens.dims(),
                extra.tokens.dims()
            )));
        }
        let (b, _, c) = img.tokens.dims3()?;
        let as_rows = |p: &Tensor| -> Result<Tensor> {
            let p = match p.rank() {
                1 => p.unsqueeze(0)?,
                _ => p.clone(),
            };
            if p.dim(p.rank() - 1)? != c || (p.dim(0)? != b && p.dim(0)? != 1) {
                return Err(Error::Shape(format!("prompt {:?} for tokens {:?}", p.dims(), img.tokens.dims())));
            }
            Ok(p.unsqueeze(1)?)
        };
        let sum = (&img.tokens + &extra.tokens)?
            .broadcast_add(&as_rows(p_pos)?)?
            .broadcast_add(&as_rows(p_neg)?)?;
        Ok(img.with_tokens(sum))
    }

    pub fn backbone(&self, tokens: &TokenFeature) -> Result<TokenFeature> {
        Ok(tokens.with_tokens(self.backbone.forward(&tokens.tokens)?))
    }

    pub fn backbone_module(&self) -> &Backbone {
        &self.backbone
    }

    /// Logits `[B, H, W]`.
    pub fn decode_logits(&self, tokens: &TokenFeature) -> Result<Tensor> {
        let (b, _, c) = tokens.tokens.dims3()?;
        let grid = tokens.tokens.reshape((b, tokens.grid_h, tokens.grid_w, c))?;
        Ok(self.decoder.logits(&grid)?)
    }

    /// Probabilities `[B, H, W]`.
    pub fn decode(&self, tokens: &TokenFeature) -> Result<Tensor> {
        Ok(candle_nn::ops::sigmoid(&self.decode_logits(tokens)?)?)
    }

    /// Full target-branch forward to logits for a batch.
    pub fn forward_logits(
        &self,
        images: &Tensor,
        extras: &Tensor,
        p_pos: &Tensor,
        p_neg: &Tensor,
    ) -> Result<Tensor> {
        let img = self.embed_image(images)?;
        let ext = self.embed_extras(extras)?;
        let fused = self.fuse(&img, &ext, p_pos, p_neg)?;
        self.decode_logits(&self.backbone(&fused)?)
    }

    /// Reference-branch tokens `[B, L, C]`: image embedding then backbone.
    pub fn reference_tokens(&self, ref_images: &Tensor) -> Result<Tensor> {
        Ok(self.backbone(&self.embed_image(ref_images)?)?.tokens)
    }

    pub fn extract_reference_feature(&self, ref_image: &RgbImage) -> Result<GridFeature> {
        let key = image_key(ref_image);
        if let Some(t) = self.reference_cache.read().expect("cache lock").get(&key) {
            return Ok(GridFeature(t.clone()));
        }
        let tokens = self.reference_tokens(&self.image_tensor(&[ref_image])?)?;
        let g = self.config.grid();
        let grid = tokens.reshape((g, g, self.config.embed_dim))?.detach();
        self.reference_cache
            .write()
            .expect("cache lock")
            .insert(key, grid.clone());
        Ok(GridFeature(grid))
    }

    pub fn clear_reference_cache(&self) {
        self.reference_cache.write().expect("cache lock").clear();
    }

    pub fn zero_prompt(&self, polarity: Polarity) -> Result<PromptVector> {
        PromptVector::zeros(polarity, self.config.embed_dim, self.dtype)
    }

    pub fn zero_prompts(&self) -> Result<ReferencePrompts> {
        Ok(ReferencePrompts {
            positive: self.zero_prompt(Polarity::Positive)?,
            negative: self.zero_prompt(Polarity::Negative)?,
        })
    }

    /// Encode one pooled representation `[C]` with the polarity's MLP.
    pub fn encode_prompt(&self, r: &Tensor, polarity: Polarity) -> Result<PromptVector> {
        if r.dims() != [self.config.embed_dim] {
            return Err(Error::Shape(format!(
                "representation {:?}, expected [{}]",
                r.dims(),
                self.config.embed_dim
            )));
        }
        let out = self.prompts.encoder(polarity).forward(&r.unsqueeze(0)?)?.squeeze(0)?;
        Ok(PromptVector {
            polarity,
            values: out,
        })
    }

    /// Prompts for a reference. Missing or empty masks give zero vectors
    /// without running the MLP.
    pub fn generate_prompts(&self, guidance: &ReferenceGuidance) -> Result<ReferencePrompts> {
        let s = self.config.input_size;
        let needs_feature = guidance.has_positive() || guidance.has_negative();
        let feature = if needs_feature {
            let img = resize_image(&guidance.image, s);
            Some(self.extract_reference_feature(&img)?)
        } else {
            None
        };
        let encode = |polarity: Polarity| -> Result<PromptVector> {
            match (guidance.mask(polarity), &feature) {
                (Some(mask), Some(feature)) => {
                    let w = mask_weights(Some(mask), s, self.config.patch_size)?;
                    let g = self.config.grid();
                    let weights = SoftMask::from_vec(g, g, w)?;
                    let r = crate::prompt::masked_representation_grid(feature, &weights)?;
                    self.encode_prompt(&r, polarity)
                }
                _ => self.zero_prompt(polarity),
            }
        };
        Ok(ReferencePrompts {
            positive: encode(Polarity::Positive)?,
            negative: encode(Polarity::Negative)?,
        })
    }

    /// One interaction round with precomputed prompts (zero prompts when
    /// `None`).
    pub fn predict_with_prompts(
        &self,
        image: &RgbImage,
        clicks: &[Click],
        prev: &SoftMask,
        prompts: Option<&ReferencePrompts>,
    ) -> Result<SoftMask> {
        let extras = assemble_extra_maps(clicks, prev, self.config.disk_radius)?;
        let zeros;
        let prompts = match prompts {
            Some(p) => p,
            None => {
                zeros = self.zero_prompts()?;
                &zeros
            }
        };
        let logits = self.forward_logits(
            &self.image_tensor(&[image])?,
            &self.extras_tensor(&[&extras])?,
            &prompts.positive.values,
            &prompts.negative.values,
        )?;
        let probs = candle_nn::ops::sigmoid(&logits)?.squeeze(0)?;
        let s = self.config.input_size;
        let values: Vec<f64> = probs.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        SoftMask::from_vec(s, s, values)
    }

    /// Segment `image` given clicks, the previous prediction and optional
    /// reference guidance.
    pub fn predict(
        &self,
        image: &RgbImage,
        clicks: &[Click],
        prev: &SoftMask,
        guidance: Option<&ReferenceGuidance>,
    ) -> Result<SoftMask> {
        let prompts = match guidance {
            Some(g) => Some(self.generate_prompts(g)?),
            None => None,
        };
        self.predict_with_prompts(image, clicks, prev, prompts.as_ref())
    }
}

/// Bilinear resize to a `size × size` square; a no-op copy when already
/// that size.
pub fn resize_image(image: &RgbImage, size: usize) -> RgbImage {
    if image.width() as usize == size && image.height() as usize == size {
        return image.clone();
    }
    image::imageops::resize(image, size as u32, size as u32, image::imageops::FilterType::Triangle)
}

fn image_key(image: &RgbImage) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    image.dimensions().hash(&mut h);
    image.as_raw().hash(&mut h);
    h.finish()
}
