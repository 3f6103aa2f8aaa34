//! Planar image buffers and binary masks.

use image::{GrayImage, Luma, Rgb, RgbImage};
use tbnet_tensor::ops::resize_plane;
use tbnet_tensor::Tensor;

use crate::error::{Error, Result};

/// What the sample values of an [`ImageTensor`] mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueRange {
    /// 8-bit style samples in `[0, 255]`.
    Pixel255,
    /// Samples in `[0, 1]`.
    PixelUnit,
    /// Unbounded feature values.
    Feature,
}

/// Dense `C × H × W` image, channel-planar.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    pub range: ValueRange,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>, range: ValueRange) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{channels}×{height}×{width} image needs {} samples, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("image contains non-finite samples".into()));
        }
        Ok(Self { channels, height, width, data, range })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, range: ValueRange) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width], range }
    }

    pub fn filled(values: &[f64], height: usize, width: usize, range: ValueRange) -> Self {
        let mut img = Self::zeros(values.len(), height, width, range);
        for (c, &v) in values.iter().enumerate() {
            img.plane_mut(c).fill(v);
        }
        img
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn require_channels(&self, channels: usize) -> Result<()> {
        if self.channels != channels {
            return Err(Error::Shape(format!("expected {channels} channels, got {}", self.channels)));
        }
        Ok(())
    }

    /// Bilinear (half-pixel) resample of every plane.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        let mut out = Self::zeros(self.channels, height, width, self.range);
        for c in 0..self.channels {
            resize_plane(self.plane(c), self.height, self.width, height, width, out.plane_mut(c));
        }
        out
    }

    pub fn crop(&self, y: usize, x: usize, height: usize, width: usize) -> Self {
        assert!(y + height <= self.height && x + width <= self.width, "crop out of bounds");
        let mut out = Self::zeros(self.channels, height, width, self.range);
        for c in 0..self.channels {
            for r in 0..height {
                let src = (c * self.height + y + r) * self.width + x;
                let dst = (c * height + r) * width;
                out.data[dst..dst + width].copy_from_slice(&self.data[src..src + width]);
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.width) {
            row.reverse();
        }
        out
    }

    pub fn flip_vertical(&self) -> Self {
        let mut out = self.clone();
        for c in 0..self.channels {
            for r in 0..self.height {
                let src = (c * self.height + r) * self.width;
                let dst = (c * self.height + self.height - 1 - r) * self.width;
                out.data[dst..dst + self.width].copy_from_slice(&self.data[src..src + self.width]);
            }
        }
        out
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Self::zeros(3, h, w, ValueRange::Pixel255);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, px[c] as f64);
            }
        }
        out
    }

    /// Rounds and clamps pixel-255 samples into an 8-bit RGB image.
    pub fn to_rgb8(&self) -> Result<RgbImage> {
        self.require_channels(3)?;
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            let v = |c| self.get(c, y as usize, x as usize).round().clamp(0.0, 255.0) as u8;
            *px = Rgb([v(0), v(1), v(2)]);
        }
        Ok(img)
    }

    /// Values quantised the way an 8-bit file would store them.
    pub fn quantized(&self) -> Self {
        self.map(|v| v.round().clamp(0.0, 255.0))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    pub fn with_range(mut self, range: ValueRange) -> Self {
        self.range = range;
        self
    }

    /// `[C, H, W]` tensor in the requested precision.
    pub fn to_tensor<T: tbnet_tensor::Float>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.channels, self.height, self.width], |i| T::of(self.data[i]))
    }
}

/// `H × W` mask with samples in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!("{height}×{width} mask needs {} samples", height * width)));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Shape("mask samples must be 0 or 1".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![1; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(y, x) as u8;
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn area_fraction(&self) -> f64 {
        self.count() as f64 / self.data.len().max(1) as f64
    }

    pub fn and(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a & b)
    }

    pub fn and_not(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a & (1 - b))
    }

    pub fn or(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a | b)
    }

    pub fn complement(&self) -> Self {
        Self { data: self.data.iter().map(|&v| 1 - v).collect(), ..self.clone() }
    }

    fn zip(&self, other: &Self, f: impl Fn(u8, u8) -> u8) -> Self {
        assert_eq!((self.height, self.width), (other.height, other.width), "mask size mismatch");
        Self { data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(), ..self.clone() }
    }

    pub fn crop(&self, y: usize, x: usize, height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |r, c| self.get(y + r, x + c))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| self.get(self.height - 1 - y, x))
    }

    /// Nearest-neighbour resample (keeps the mask binary).
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |y, x| {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
            self.get(sy.min(self.height - 1), sx.min(self.width - 1))
        })
    }

    /// Mask as `0.0 / 1.0` samples.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn from_gray8(img: &GrayImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self { height: h, width: w, data: img.pixels().map(|p| (p[0] > 127) as u8).collect() }
    }

    /// 8-bit image with values 0 / 255.
    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        })
    }
}
