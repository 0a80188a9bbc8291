use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Side lengths accepted by the networks (three exact ×2 downsamplings).
pub const NETWORK_SIZES: [usize; 4] = [32, 64, 128, 256];

/// Single-channel floating-point image, normalized to [-1, 1] once preprocessed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image2D {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    /// Pixel spacing in mm as (row, column).
    pub spacing: (f32, f32),
}

impl Image2D {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        if let Some(index) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            pixels,
            spacing: (1.0, 1.0),
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
            spacing: (1.0, 1.0),
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            pixels,
            spacing: (1.0, 1.0),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    /// Checks the square power-of-two shape the generators require.
    pub fn check_network_size(&self) -> Result<()> {
        if self.height != self.width || !NETWORK_SIZES.contains(&self.height) {
            return Err(Error::ShapeMismatch(format!(
                "network input must be square with side in {NETWORK_SIZES:?}, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn to_tensor<T: crate::nn::Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[1, self.height, self.width],
            self.pixels.iter().map(|&v| T::of(v as f64)).collect(),
        )
    }

    /// Builds an image from a 1×H×W tensor.
    pub fn from_tensor<T: crate::nn::Real>(t: &Tensor<T>) -> Self {
        let (c, h, w) = t.chw();
        assert_eq!(c, 1, "image tensors are single-channel");
        Self {
            height: h,
            width: w,
            pixels: t.data().iter().map(|v| v.as_f64() as f32).collect(),
            spacing: (1.0, 1.0),
        }
    }

    /// Left-right flip (sagittal mirroring for axial slices).
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            out.pixels[y * self.width..(y + 1) * self.width].reverse();
        }
        out
    }

    pub fn mean_abs_diff(&self, other: &Image2D) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / self.pixels.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn clamp_unit(&mut self) {
        self.pixels
            .iter_mut()
            .for_each(|v| *v = v.clamp(-1.0, 1.0));
    }
}

/// Binary {0, 1} mask aligned with an [`Image2D`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask2D {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl BinaryMask2D {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} mask pixels for a {height}x{width} mask",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|&v| v > 1) {
            return Err(Error::InvalidConfig(format!(
                "mask value {} at index {i} is not 0 or 1",
                pixels[i]
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(u8::from(f(y, x)));
            }
        }
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn from_bools(height: usize, width: usize, bits: &[bool]) -> Self {
        assert_eq!(bits.len(), height * width);
        Self {
            height,
            width,
            pixels: bits.iter().map(|&b| u8::from(b)).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.pixels[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.pixels[y * self.width + x] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn union(&self, other: &BinaryMask2D) -> BinaryMask2D {
        assert_eq!(self.shape(), other.shape());
        Self {
            height: self.height,
            width: self.width,
            pixels: self
                .pixels
                .iter()
                .zip(&other.pixels)
                .map(|(a, b)| a | b)
                .collect(),
        }
    }

    pub fn intersection(&self, other: &BinaryMask2D) -> BinaryMask2D {
        assert_eq!(self.shape(), other.shape());
        Self {
            height: self.height,
            width: self.width,
            pixels: self
                .pixels
                .iter()
                .zip(&other.pixels)
                .map(|(a, b)| a & b)
                .collect(),
        }
    }

    pub fn difference(&self, other: &BinaryMask2D) -> BinaryMask2D {
        assert_eq!(self.shape(), other.shape());
        Self {
            height: self.height,
            width: self.width,
            pixels: self
                .pixels
                .iter()
                .zip(&other.pixels)
                .map(|(a, b)| a & (1 - b))
                .collect(),
        }
    }

    pub fn complement(&self) -> BinaryMask2D {
        Self {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|v| 1 - v).collect(),
        }
    }

    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            out.pixels[y * self.width..(y + 1) * self.width].reverse();
        }
        out
    }

    /// Coordinates of all set pixels in row-major order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    pub fn is_subset_of(&self, other: &BinaryMask2D) -> bool {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .all(|(&a, &b)| a <= b)
    }
}
