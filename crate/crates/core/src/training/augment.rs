//! Geometric augmentation of a target image and its mask.

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::maskops::BitMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip: bool,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            scale_min: 0.75,
            scale_max: 1.4,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            flip: false,
            scale_min: 1.0,
            scale_max: 1.0,
        }
    }
}

fn flip_image(img: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(img)
}

/// Random flip, random rescale, then a random `size × size` crop (or a pad
/// with the mean colour when the rescaled image is smaller). Crops that
/// lose the whole mask are redrawn; after a few failures the unscaled
/// image is used.
pub fn augment<R: Rng + ?Sized>(
    image: &RgbImage,
    mask: &BitMask,
    size: usize,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<(RgbImage, BitMask)> {
    let (mut img, mut m) = (image.clone(), mask.clone());
    if config.flip && rng.gen_bool(0.5) {
        img = flip_image(&img);
        m = m.flip_horizontal();
    }
    let scale = if config.scale_max > config.scale_min {
        rng.gen_range(config.scale_min..=config.scale_max)
    } else {
        config.scale_min
    };
    let n = ((size as f64 * scale).round() as usize).max(1);
    let scaled_img = if (img.width() as usize, img.height() as usize) == (n, n) {
        img.clone()
    } else {
        image::imageops::resize(&img, n as u32, n as u32, image::imageops::FilterType::Triangle)
    };
    let scaled_mask = m.resize_nearest(n, n)?;

    for _ in 0..8 {
        let (out_img, out_mask) = if n >= size {
            let (y0, x0) = (rng.gen_range(0..=n - size), rng.gen_range(0..=n - size));
            let crop = image::imageops::crop_imm(&scaled_img, x0 as u32, y0 as u32, size as u32, size as u32).to_image();
            let mask = BitMask::from_fn(size, size, |r, c| scaled_mask.get(r + y0, c + x0))?;
            (crop, mask)
        } else {
            let (y0, x0) = (rng.gen_range(0..=size - n), rng.gen_range(0..=size - n));
            let mut canvas = RgbImage::from_pixel(size as u32, size as u32, mean_color(&scaled_img));
            image::imageops::replace(&mut canvas, &scaled_img, x0 as i64, y0 as i64);
            let mask = BitMask::from_fn(size, size, |r, c| {
                r >= y0 && c >= x0 && r < y0 + n && c < x0 + n && scaled_mask.get(r - y0, c - x0)
            })?;
            (canvas, mask)
        };
        if out_mask.count() * 4 >= scaled_mask.count().min(size * size) {
            return Ok((out_img, out_mask));
        }
    }
    let img = crate::model::resize_image(&img, size);
    Ok((img, m.resize_nearest(size, size)?))
}

fn mean_color(img: &RgbImage) -> Rgb<u8> {
    let n = (img.width() as u64 * img.height() as u64).max(1);
    let mut sum = [0u64; 3];
    for px in img.pixels() {
        for ch in 0..3 {
            sum[ch] += px[ch] as u64;
        }
    }
    Rgb(sum.map(|s| (s / n) as u8))
}
