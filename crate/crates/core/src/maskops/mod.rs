//! Deterministic primitives on binary and soft masks.
//!
//! Every operation here is a pure function with a fixed tie-break rule
//! (documented per function), so results are reproducible bit for bit.

mod components;
mod contour;
mod distance;
mod rle;

pub use components::{connected_components, largest_component, Connectivity, LabeledRegions};
pub use contour::{rasterize_polygons, simplify_polygon, trace_contours, Point, Polygon};
pub use distance::{interior_center, squared_distance_to_background};
pub use rle::{rle_decode, rle_encode};

use crate::error::{Error, Result};

/// Binary H×W mask stored row-major, one byte per pixel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for BitMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BitMask {}x{} ({} set)", self.height, self.width, self.count())?;
        if self.height * self.width <= 1024 {
            for r in 0..self.height {
                let row: String = (0..self.width)
                    .map(|c| if self.get(r, c) { '#' } else { '.' })
                    .collect();
                writeln!(f, "  {row}")?;
            }
        }
        Ok(())
    }
}

fn check_size(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::ZeroSize { height, width });
    }
    Ok(())
}

impl BitMask {
    /// All-zero mask.
    pub fn new(height: usize, width: usize) -> Result<Self> {
        check_size(height, width)?;
        Ok(Self {
            height,
            width,
            data: vec![0; height * width],
        })
    }

    pub fn full(height: usize, width: usize) -> Result<Self> {
        check_size(height, width)?;
        Ok(Self {
            height,
            width,
            data: vec![1; height * width],
        })
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_size(height, width)?;
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width} mask",
                data.len()
            )));
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NotBinary { index, value });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        check_size(height, width)?;
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Mask with the listed `(row, col)` pixels set.
    pub fn from_pixels(height: usize, width: usize, pixels: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::new(height, width)?;
        for &(r, c) in pixels {
            if r >= height || c >= width {
                return Err(Error::Shape(format!(
                    "pixel ({r}, {c}) outside {height}x{width}"
                )));
            }
            m.set(r, c, true);
        }
        Ok(m)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Foreground pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(i, _)| (i / w, i % w))
    }

    fn ensure_same_dims(&self, other: &BitMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &BitMask, f: impl Fn(u8, u8) -> u8) -> Result<BitMask> {
        self.ensure_same_dims(other)?;
        Ok(BitMask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn union(&self, other: &BitMask) -> Result<BitMask> {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &BitMask) -> Result<BitMask> {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn xor(&self, other: &BitMask) -> Result<BitMask> {
        self.zip_with(other, |a, b| a ^ b)
    }

    /// Pixels set in `self` but not in `other`.
    pub fn difference(&self, other: &BitMask) -> Result<BitMask> {
        self.zip_with(other, |a, b| a & (1 - b))
    }

    pub fn complement(&self) -> BitMask {
        BitMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// Soft copy with values 0.0 / 1.0.
    pub fn to_soft(&self) -> SoftMask {
        SoftMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<BitMask> {
        check_size(height, width)?;
        BitMask::from_fn(height, width, |r, c| {
            let sr = (r * self.height) / height;
            let sc = (c * self.width) / width;
            self.get(sr, sc)
        })
    }

    /// Horizontal mirror.
    pub fn flip_horizontal(&self) -> BitMask {
        BitMask::from_fn(self.height, self.width, |r, c| self.get(r, self.width - 1 - c))
            .expect("dimensions already validated")
    }
}

/// Real-valued H×W mask with entries in [0, 1].
#[derive(Clone, PartialEq)]
pub struct SoftMask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl std::fmt::Debug for SoftMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SoftMask {}x{} (sum {:.3})", self.height, self.width, self.sum())
    }
}

impl SoftMask {
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        check_size(height, width)?;
        Ok(Self {
            height,
            width,
            data: vec![0.0; height * width],
        })
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_size(height, width)?;
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width} mask",
                data.len()
            )));
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::OutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Multiply every entry by `c`, clamping to [0, 1].
    pub fn scaled(&self, c: f64) -> SoftMask {
        SoftMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| (v * c).clamp(0.0, 1.0)).collect(),
        }
    }

    /// Foreground where the probability is strictly above `threshold`.
    pub fn threshold(&self, threshold: f64) -> BitMask {
        BitMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| (v > threshold) as u8).collect(),
        }
    }
}

/// Intersection over union. Two empty masks have IoU 1.
pub fn iou(a: &BitMask, b: &BitMask) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Area-average downsampling by an integer factor.
///
/// The input is zero-padded on the bottom and right to a multiple of
/// `factor`; each output cell is the mean of its `factor × factor` block.
pub fn downsample_area(m: &BitMask, factor: usize) -> Result<SoftMask> {
    if factor == 0 {
        return Err(Error::InvalidFactor);
    }
    let oh = m.height.div_ceil(factor);
    let ow = m.width.div_ceil(factor);
    let mut counts = vec![0u32; oh * ow];
    for (r, c) in m.pixels() {
        counts[(r / factor) * ow + c / factor] += 1;
    }
    let area = (factor * factor) as f64;
    Ok(SoftMask {
        height: oh,
        width: ow,
        data: counts.into_iter().map(|n| n as f64 / area).collect(),
    })
}
