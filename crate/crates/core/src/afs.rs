//! Adaptive frequency selection.
//!
//! The selection layer scores every frequency channel from its global average
//! (`GAP → 1×1 conv → BN → ReLU → 1×1 conv → sigmoid`) and rescales the channel
//! by its score. The modulation layer then mixes channels (3×3 depthwise conv,
//! BN, ReLU, 1×1 conv, BN) and maps `K` channels onto the backbone width, taking
//! the place of the frequency stream's conv1-x.

use rand::Rng;
use tbnet_tensor::{BatchNorm2d, Conv2d, ConvSpec, Float, ParamStore, Session, Tensor, Var};

use crate::error::{Error, Result};
use crate::frequency::{frequency_volume, FrequencyVolume};
use crate::image::ImageTensor;

/// Per-image channel scores `α ∈ [0, 1]^K`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelWeights {
    pub alpha: Vec<f64>,
    pub reduction: usize,
}

impl ChannelWeights {
    /// Scores of one colour component (`0` = Y, `1` = Cb, `2` = Cr).
    pub fn component(&self, component: usize, block_size: usize) -> &[f64] {
        let n = block_size * block_size;
        &self.alpha[component * n..(component + 1) * n]
    }
}

/// Frequency selection layer.
#[derive(Clone, Debug)]
pub struct FrequencySelect {
    pub conv1: Conv2d,
    pub bn: BatchNorm2d,
    pub conv2: Conv2d,
    pub channels: usize,
    pub reduction: usize,
}

impl FrequencySelect {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!("{channels} channels cannot be reduced by r = {reduction}")));
        }
        let hidden = channels / reduction;
        let pw = ConvSpec::default();
        Ok(Self {
            conv1: Conv2d::new(store, &format!("{path}.conv1"), channels, hidden, 1, pw, false, rng)?,
            bn: BatchNorm2d::new(store, &format!("{path}.bn"), hidden)?,
            conv2: Conv2d::new(store, &format!("{path}.conv2"), hidden, channels, 1, pw, true, rng)?,
            channels,
            reduction,
        })
    }

    pub fn bottleneck_width(&self) -> usize {
        self.channels / self.reduction
    }

    /// Returns `(D̃*, α)` with `α` shaped `[N, K, 1, 1]`.
    pub fn forward<T: Float>(&self, s: &mut Session<T>, volume: Var) -> Result<(Var, Var)> {
        let (_, k, _, _) = s.value(volume).dims4();
        if k != self.channels {
            return Err(Error::Config(format!("frequency selection built for {} channels, got {k}", self.channels)));
        }
        let pooled = s.graph.global_avg_pool(volume);
        let z = self.conv1.forward(s, pooled);
        let z = self.bn.forward(s, z);
        let z = s.graph.relu(z);
        let z = self.conv2.forward(s, z);
        let alpha = s.graph.sigmoid(z);
        Ok((s.graph.mul_channels(volume, alpha), alpha))
    }
}

/// Frequency modulation layer: `BN(Conv₄(ReLU(BN(Conv₃(D̃*)))))`.
#[derive(Clone, Debug)]
pub struct FrequencyModulate {
    pub conv3: Conv2d,
    pub bn3: BatchNorm2d,
    pub conv4: Conv2d,
    pub bn4: BatchNorm2d,
}

impl FrequencyModulate {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let grouped = ConvSpec { padding: 1, groups: channels, ..ConvSpec::default() };
        Ok(Self {
            conv3: Conv2d::new(store, &format!("{path}.conv3"), channels, channels, 3, grouped, false, rng)?,
            bn3: BatchNorm2d::new(store, &format!("{path}.bn3"), channels)?,
            conv4: Conv2d::new(store, &format!("{path}.conv4"), channels, out_channels, 1, ConvSpec::default(), false, rng)?,
            bn4: BatchNorm2d::new(store, &format!("{path}.bn4"), out_channels)?,
        })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, weighted: Var) -> Var {
        let y = self.conv3.forward(s, weighted);
        let y = self.bn3.forward(s, y);
        let y = s.graph.relu(y);
        let y = self.conv4.forward(s, y);
        self.bn4.forward(s, y)
    }
}

/// Output of the AFS module on a batch.
#[derive(Clone, Copy, Debug)]
pub struct AfsOutput {
    /// `[N, C, 2H/P, 2W/P]`.
    pub features: Var,
    /// `[N, K, 1, 1]` channel scores.
    pub alpha: Var,
}

#[derive(Clone, Debug)]
pub struct Afs {
    pub select: FrequencySelect,
    pub modulate: FrequencyModulate,
    pub block_size: usize,
    pub out_channels: usize,
}

impl Afs {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        block_size: usize,
        reduction: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let k = 3 * block_size * block_size;
        Ok(Self {
            select: FrequencySelect::new(store, &format!("{path}.select"), k, reduction, rng)?,
            modulate: FrequencyModulate::new(store, &format!("{path}.modulate"), k, out_channels, rng)?,
            block_size,
            out_channels,
        })
    }

    pub fn channels(&self) -> usize {
        self.select.channels
    }

    /// Selection then modulation on a batch of normalised volumes `[N, K, h, w]`.
    pub fn forward<T: Float>(&self, s: &mut Session<T>, volume: Var) -> Result<AfsOutput> {
        let (weighted, alpha) = self.select.forward(s, volume)?;
        Ok(AfsOutput { features: self.modulate.forward(s, weighted), alpha })
    }

    /// Runs the frequency front end on RGB images, then the two layers.
    pub fn forward_images<T: Float>(&self, s: &mut Session<T>, images: &[ImageTensor]) -> Result<AfsOutput> {
        let volume = volume_batch(images, self.block_size)?;
        let v = s.input(volume);
        self.forward(s, v)
    }

    /// Channel scores of every image in the batch.
    pub fn channel_weights<T: Float>(&self, s: &Session<T>, out: &AfsOutput) -> Vec<ChannelWeights> {
        let alpha = s.value(out.alpha);
        let (n, k, _, _) = alpha.dims4();
        (0..n)
            .map(|b| ChannelWeights {
                alpha: alpha.data()[b * k..(b + 1) * k].iter().map(|v| v.as_f64()).collect(),
                reduction: self.select.reduction,
            })
            .collect()
    }
}

/// Stacks per-image normalised frequency volumes into `[N, K, h, w]`.
pub fn volume_batch<T: Float>(images: &[ImageTensor], block_size: usize) -> Result<Tensor<T>> {
    let vols = images
        .iter()
        .map(|img| frequency_volume(img, block_size).map(|v| v.to_tensor::<T>()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&vols)?)
}

/// Stacks already computed volumes.
pub fn stack_volumes<T: Float>(vols: &[FrequencyVolume]) -> Result<Tensor<T>> {
    Ok(Tensor::stack(&vols.iter().map(|v| v.to_tensor::<T>()).collect::<Vec<_>>())?)
}
