//! RGB image → normalised block-DCT coefficient volume.
//!
//! The image is converted to full-range YCbCr, upsampled 2× so the volume lands
//! on the RGB stream's quarter-resolution grid, cut into `P×P` blocks and
//! transformed with an orthonormal DCT-II. Coefficient `(u, v)` of component `c`
//! from every block is gathered into channel `c·P² + u·P + v` at the block's grid
//! position.

use tbnet_tensor::{Float, Tensor};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, ValueRange};

/// Guards the division for constant channels.
pub const NORMALIZE_EPS: f64 = 1e-6;

/// Full-range BT.601 (JPEG) RGB → YCbCr for one pixel.
pub fn rgb_to_ycbcr_pixel(r: f64, g: f64, b: f64) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b,
        128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b,
    ]
}

/// Inverse of [`rgb_to_ycbcr_pixel`].
pub fn ycbcr_to_rgb_pixel(y: f64, cb: f64, cr: f64) -> [f64; 3] {
    let (cb, cr) = (cb - 128.0, cr - 128.0);
    [y + 1.402 * cr, y - 0.344_136 * cb - 0.714_136 * cr, y + 1.772 * cb]
}

pub fn rgb_to_ycbcr(img: &ImageTensor) -> Result<ImageTensor> {
    img.require_channels(3)?;
    let mut out = ImageTensor::zeros(3, img.height(), img.width(), ValueRange::Pixel255);
    let n = img.height() * img.width();
    for i in 0..n {
        let px = rgb_to_ycbcr_pixel(img.data()[i], img.data()[n + i], img.data()[2 * n + i]);
        for (c, v) in px.into_iter().enumerate() {
            out.data_mut()[c * n + i] = v;
        }
    }
    Ok(out)
}

/// `3×H×W` RGB (pixel-255) → `3×2H×2W` YCbCr, bilinear upsampling.
pub fn rgb_to_ycbcr_resized(img: &ImageTensor) -> Result<ImageTensor> {
    img.require_channels(3)?;
    if img.height() < 8 || img.width() < 8 {
        return Err(Error::Shape(format!(
            "frequency pipeline needs at least 8×8 input, got {}×{}",
            img.height(),
            img.width()
        )));
    }
    Ok(rgb_to_ycbcr(img)?.resize(2 * img.height(), 2 * img.width()))
}

/// Row-major `P×P` orthonormal DCT-II basis: `basis[u][n] = α(u)·cos(π(2n+1)u / 2P)`.
pub fn dct_basis(p: usize) -> Vec<f64> {
    let mut m = vec![0.0; p * p];
    for u in 0..p {
        let alpha = if u == 0 { (1.0 / p as f64).sqrt() } else { (2.0 / p as f64).sqrt() };
        for n in 0..p {
            m[u * p + n] = alpha * (std::f64::consts::PI * (2 * n + 1) as f64 * u as f64 / (2 * p) as f64).cos();
        }
    }
    m
}

/// Per-channel statistics removed by [`normalize_channels`].
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

/// `K × (H'/P) × (W'/P)` coefficient volume, `K = 3·P²`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyVolume {
    pub block_size: usize,
    pub num_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channel-planar coefficients.
    pub data: Vec<f64>,
    /// Set once the volume has been normalised.
    pub stats: Option<ChannelStats>,
}

impl FrequencyVolume {
    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[k * n..(k + 1) * n]
    }

    /// `[K, h, w]` tensor for the network.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.num_channels, self.height, self.width], |i| T::of(self.data[i]))
    }

    /// Index of coefficient `(u, v)` of colour component `component`.
    pub fn channel_index(&self, component: usize, u: usize, v: usize) -> usize {
        let p = self.block_size;
        component * p * p + u * p + v
    }
}

/// Block DCT of every component followed by the frequency-major rearrangement.
pub fn block_dct_rearrange(ycbcr: &ImageTensor, block_size: usize) -> Result<FrequencyVolume> {
    let p = block_size;
    let (c, h, w) = (ycbcr.channels(), ycbcr.height(), ycbcr.width());
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Shape(format!("{h}×{w} is not divisible into {p}×{p} blocks")));
    }
    let (bh, bw) = (h / p, w / p);
    let basis = dct_basis(p);
    let k = c * p * p;
    let mut data = vec![0.0; k * bh * bw];
    let mut block = vec![0.0; p * p];
    let mut tmp = vec![0.0; p * p];
    for comp in 0..c {
        let plane = ycbcr.plane(comp);
        for by in 0..bh {
            for bx in 0..bw {
                for i in 0..p {
                    let row = (by * p + i) * w + bx * p;
                    block[i * p..(i + 1) * p].copy_from_slice(&plane[row..row + p]);
                }
                // tmp = B · X, coeffs = tmp · Bᵀ
                for u in 0..p {
                    for j in 0..p {
                        tmp[u * p + j] = (0..p).map(|i| basis[u * p + i] * block[i * p + j]).sum();
                    }
                }
                for u in 0..p {
                    for v in 0..p {
                        let coeff: f64 = (0..p).map(|j| tmp[u * p + j] * basis[v * p + j]).sum();
                        let ch = comp * p * p + u * p + v;
                        data[(ch * bh + by) * bw + bx] = coeff;
                    }
                }
            }
        }
    }
    Ok(FrequencyVolume { block_size: p, num_channels: k, height: bh, width: bw, data, stats: None })
}

/// Undoes [`block_dct_rearrange`] (ignores any normalisation).
pub fn inverse_block_dct_rearrange(vol: &FrequencyVolume) -> Result<ImageTensor> {
    let p = vol.block_size;
    if vol.num_channels % (p * p) != 0 {
        return Err(Error::Shape(format!("{} channels is not a multiple of {}", vol.num_channels, p * p)));
    }
    let comps = vol.num_channels / (p * p);
    let (bh, bw) = (vol.height, vol.width);
    let (h, w) = (bh * p, bw * p);
    let basis = dct_basis(p);
    let mut out = ImageTensor::zeros(comps, h, w, ValueRange::Pixel255);
    let mut coeffs = vec![0.0; p * p];
    let mut tmp = vec![0.0; p * p];
    for comp in 0..comps {
        for by in 0..bh {
            for bx in 0..bw {
                for u in 0..p {
                    for v in 0..p {
                        coeffs[u * p + v] = vol.data[((comp * p * p + u * p + v) * bh + by) * bw + bx];
                    }
                }
                // X = Bᵀ · C · B
                for i in 0..p {
                    for v in 0..p {
                        tmp[i * p + v] = (0..p).map(|u| basis[u * p + i] * coeffs[u * p + v]).sum();
                    }
                }
                for i in 0..p {
                    for j in 0..p {
                        let x: f64 = (0..p).map(|v| tmp[i * p + v] * basis[v * p + j]).sum();
                        out.set(comp, by * p + i, bx * p + j, x);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `d̃_k = (d_k − μ_k) / (σ_k + ε)` with per-image statistics.
pub fn normalize_channels(vol: &FrequencyVolume) -> FrequencyVolume {
    let n = (vol.height * vol.width) as f64;
    let mut out = vol.clone();
    let mut stats = ChannelStats { mean: Vec::with_capacity(vol.num_channels), std: Vec::with_capacity(vol.num_channels) };
    for k in 0..vol.num_channels {
        let ch = out.channel_mut(k);
        let mean = ch.iter().sum::<f64>() / n;
        let std = (ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let inv = 1.0 / (std + NORMALIZE_EPS);
        ch.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        stats.mean.push(mean);
        stats.std.push(std);
    }
    out.stats = Some(stats);
    out
}

/// Restores raw coefficients from a normalised volume.
pub fn denormalize_channels(vol: &FrequencyVolume) -> Result<FrequencyVolume> {
    let stats = vol.stats.as_ref().ok_or_else(|| Error::Shape("volume is not normalised".into()))?;
    let mut out = vol.clone();
    for k in 0..vol.num_channels {
        let (mean, scale) = (stats.mean[k], stats.std[k] + NORMALIZE_EPS);
        out.channel_mut(k).iter_mut().for_each(|v| *v = *v * scale + mean);
    }
    out.stats = None;
    Ok(out)
}

/// Pooled per-channel statistics over a set of raw volumes of equal layout.
pub fn fit_channel_stats(vols: &[FrequencyVolume]) -> Result<ChannelStats> {
    let first = vols.first().ok_or_else(|| Error::Shape("no volumes to fit statistics on".into()))?;
    let k = first.num_channels;
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    let mut count = 0.0;
    for v in vols {
        if v.num_channels != k || v.block_size != first.block_size {
            return Err(Error::Shape("volumes disagree in channel layout".into()));
        }
        for c in 0..k {
            for &x in v.channel(c) {
                sum[c] += x;
                sq[c] += x * x;
            }
        }
        count += (v.height * v.width) as f64;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let std = sq.iter().zip(&mean).map(|(q, m)| (q / count - m * m).max(0.0).sqrt()).collect();
    Ok(ChannelStats { mean, std })
}

/// `(d_k − μ_k) / (σ_k + ε)` with externally supplied statistics.
pub fn normalize_with(vol: &FrequencyVolume, stats: &ChannelStats) -> Result<FrequencyVolume> {
    if stats.mean.len() != vol.num_channels || stats.std.len() != vol.num_channels {
        return Err(Error::Shape(format!("statistics for {} channels, volume has {}", stats.mean.len(), vol.num_channels)));
    }
    let mut out = vol.clone();
    for k in 0..vol.num_channels {
        let (mean, inv) = (stats.mean[k], 1.0 / (stats.std[k] + NORMALIZE_EPS));
        out.channel_mut(k).iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    out.stats = Some(stats.clone());
    Ok(out)
}

/// Colour convert, resize and block DCT, without normalisation.
pub fn raw_frequency_volume(img: &ImageTensor, block_size: usize) -> Result<FrequencyVolume> {
    block_dct_rearrange(&rgb_to_ycbcr_resized(img)?, block_size)
}

/// The whole non-learned front end: colour convert, resize, block DCT, normalise.
pub fn frequency_volume(img: &ImageTensor, block_size: usize) -> Result<FrequencyVolume> {
    let ycc = rgb_to_ycbcr_resized(img)?;
    Ok(normalize_channels(&block_dct_rearrange(&ycc, block_size)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(rgb: [f64; 3], size: usize) -> ImageTensor {
        ImageTensor::filled(&rgb, size, size, ValueRange::Pixel255)
    }

    #[test]
    fn black_and_white_are_achromatic() {
        let black = rgb_to_ycbcr_resized(&uniform([0.0; 3], 8)).unwrap();
        let white = rgb_to_ycbcr_resized(&uniform([255.0; 3], 8)).unwrap();
        assert_eq!((black.height(), black.width()), (16, 16));
        for i in 0..256 {
            assert!((black.plane(0)[i]).abs() < 1e-9);
            assert!((black.plane(1)[i] - 128.0).abs() < 1e-9);
            assert!((black.plane(2)[i] - 128.0).abs() < 1e-9);
            assert!((white.plane(0)[i] - 255.0).abs() < 1e-9);
            assert!((white.plane(1)[i] - 128.0).abs() < 1e-9);
            assert!((white.plane(2)[i] - 128.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pure_red_matches_scalar_matrix() {
        // Y = 0.299·255, Cb = 128 − 0.168736·255, Cr = 128 + 0.5·255
        let expected = [76.245, 84.97232, 255.5];
        let out = rgb_to_ycbcr_resized(&uniform([255.0, 0.0, 0.0], 8)).unwrap();
        for (c, e) in expected.iter().enumerate() {
            assert!((out.get(c, 3, 5) - e).abs() < 0.5);
        }
    }

    #[test]
    fn rejects_wrong_channel_count_and_tiny_inputs() {
        assert!(rgb_to_ycbcr_resized(&ImageTensor::zeros(1, 8, 8, ValueRange::Pixel255)).is_err());
        assert!(rgb_to_ycbcr_resized(&ImageTensor::zeros(3, 4, 8, ValueRange::Pixel255)).is_err());
    }

    #[test]
    fn constant_blocks_only_have_dc() {
        let img = ImageTensor::filled(&[10.0, 20.0, 30.0], 16, 24, ValueRange::Pixel255);
        let vol = block_dct_rearrange(&img, 8).unwrap();
        assert_eq!((vol.num_channels, vol.height, vol.width), (192, 2, 3));
        for k in 0..192 {
            let expected = match k {
                0 => 80.0,
                64 => 160.0,
                128 => 240.0,
                _ => 0.0,
            };
            assert!(vol.channel(k).iter().all(|v| (v - expected).abs() < 1e-9), "channel {k}");
        }
    }

    #[test]
    fn zero_image_gives_zero_volume() {
        let vol = block_dct_rearrange(&ImageTensor::zeros(3, 16, 16, ValueRange::Pixel255), 8).unwrap();
        assert!(vol.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indivisible_size_is_rejected() {
        assert!(block_dct_rearrange(&ImageTensor::zeros(3, 12, 16, ValueRange::Pixel255), 8).is_err());
    }

    #[test]
    fn symmetric_two_value_channel_normalises_to_unit() {
        let vol = FrequencyVolume {
            block_size: 1,
            num_channels: 1,
            height: 2,
            width: 2,
            data: vec![1.0, 3.0, 3.0, 1.0],
            stats: None,
        };
        let out = normalize_channels(&vol);
        for (v, e) in out.data.iter().zip([-1.0, 1.0, 1.0, -1.0]) {
            assert!((v - e).abs() < 1e-5);
        }
        let stats = out.stats.unwrap();
        assert_eq!((stats.mean[0], stats.std[0]), (2.0, 1.0));
    }

    #[test]
    fn constant_channel_normalises_to_zero() {
        let vol = FrequencyVolume { block_size: 1, num_channels: 1, height: 3, width: 3, data: vec![7.5; 9], stats: None };
        assert!(normalize_channels(&vol).data.iter().all(|&v| v == 0.0));
    }
}
