//! Full two-stream network: RGB encoder, frequency encoder, per-level fusion,
//! boundary stream and decoder, plus the ablation switches that remove parts
//! of it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tbnet_tensor::{Float, ParamId, ParamStore, Session, Tensor, Var};

use crate::acf::{Acf, ConcatFusion, FusionMap, Stream, StreamFeature};
use crate::afs::{Afs, AfsOutput, ChannelWeights};
use crate::backbone::{BackboneDepth, ResStages, RgbEncoder};
use crate::bal::{Bal, BalOutput};
use crate::decoder::Decoder;
use crate::error::{Error, Result};
use crate::frequency::{fit_channel_stats, frequency_volume, raw_frequency_volume, NORMALIZE_EPS};
use crate::image::{ImageTensor, ValueRange};

/// Per-channel mean/std applied to RGB input scaled to `[0, 1]`.
pub const RGB_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const RGB_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Where the frequency-channel statistics come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrequencyNorm {
    /// Each image's own channel mean and std. Every normalised channel then
    /// averages to zero, so the selection layer's pooled input carries no signal.
    PerImage,
    /// Statistics fitted once on training images and stored with the parameters.
    Dataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub backbone: BackboneDepth,
    pub input_size: usize,
    /// Width `C` of the AFS output. It is also the backbone base width, since
    /// both streams must agree in shape level by level.
    pub afs_out_channels: usize,
    pub bal_channels: usize,
    pub bal_units: usize,
    pub block_size: usize,
    pub reduction: usize,
    pub frequency_norm: FrequencyNorm,
    pub decoder_channels: usize,
    pub skip_channels: usize,
    pub use_rgb: bool,
    pub use_frequency: bool,
    pub use_acf: bool,
    pub use_bal: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneDepth::Resnet18,
            input_size: 256,
            afs_out_channels: 64,
            bal_channels: 32,
            bal_units: 4,
            block_size: 8,
            reduction: 8,
            frequency_norm: FrequencyNorm::Dataset,
            decoder_channels: 256,
            skip_channels: 48,
            use_rgb: true,
            use_frequency: true,
            use_acf: true,
            use_bal: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return bad(format!("input_size {} must be a positive multiple of 32", self.input_size));
        }
        if !self.use_rgb && !self.use_frequency {
            return bad("at least one of the RGB and frequency streams must be enabled".into());
        }
        if self.use_acf && !(self.use_rgb && self.use_frequency) {
            return bad("cross-attention fusion needs both streams".into());
        }
        for (name, v) in [
            ("afs_out_channels", self.afs_out_channels),
            ("decoder_channels", self.decoder_channels),
            ("skip_channels", self.skip_channels),
            ("block_size", self.block_size),
            ("reduction", self.reduction),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.use_bal && (self.bal_channels == 0 || self.bal_units == 0) {
            return bad("boundary stream needs positive bal_channels and bal_units".into());
        }
        if self.use_frequency {
            let k = 3 * self.block_size * self.block_size;
            if k % self.reduction != 0 {
                return bad(format!("{k} frequency channels not divisible by reduction {}", self.reduction));
            }
            if (2 * self.input_size) % self.block_size != 0 || 2 * self.input_size / self.block_size != self.input_size / 4 {
                return bad(format!(
                    "block_size {} does not give a frequency grid of input_size/4 = {}",
                    self.block_size,
                    self.input_size / 4
                ));
            }
        }
        Ok(())
    }

    pub fn ablation(&self) -> Option<Ablation> {
        Ablation::ALL.into_iter().find(|a| {
            let mut c = self.clone();
            a.apply(&mut c);
            c == *self
        })
    }

    /// Channel counts of levels 2–5.
    pub fn level_channels(&self) -> [usize; 4] {
        self.backbone.stage_channels(self.afs_out_channels)
    }
}

/// The model family compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    RNet,
    FNet,
    TNet,
    TNetAcf,
    RNetBal,
    FNetBal,
    TNetBal,
    TbNet,
}

impl Ablation {
    pub const ALL: [Ablation; 8] =
        [Self::RNet, Self::FNet, Self::TNet, Self::TNetAcf, Self::RNetBal, Self::FNetBal, Self::TNetBal, Self::TbNet];

    /// `(use_rgb, use_frequency, use_acf, use_bal)`.
    pub fn flags(self) -> (bool, bool, bool, bool) {
        match self {
            Self::RNet => (true, false, false, false),
            Self::FNet => (false, true, false, false),
            Self::TNet => (true, true, false, false),
            Self::TNetAcf => (true, true, true, false),
            Self::RNetBal => (true, false, false, true),
            Self::FNetBal => (false, true, false, true),
            Self::TNetBal => (true, true, false, true),
            Self::TbNet => (true, true, true, true),
        }
    }

    pub fn apply(self, config: &mut NetworkConfig) {
        let (r, f, a, b) = self.flags();
        config.use_rgb = r;
        config.use_frequency = f;
        config.use_acf = a;
        config.use_bal = b;
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::RNet => "rnet",
            Self::FNet => "fnet",
            Self::TNet => "tnet",
            Self::TNetAcf => "tnet+acf",
            Self::RNetBal => "rnet+bal",
            Self::FNetBal => "fnet+bal",
            Self::TNetBal => "tnet+bal",
            Self::TbNet => "tbnet",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

/// Preprocessed network input for a batch.
#[derive(Clone, Debug)]
pub struct NetInput<T: Float> {
    /// Normalised RGB, `[N, 3, H, W]`.
    pub rgb: Option<Tensor<T>>,
    /// Frequency volumes, `[N, 3P², H/4, W/4]`; raw under dataset-level normalisation.
    pub frequency: Option<Tensor<T>>,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

/// Everything a forward pass produced; handles refer to the session's graph.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub region_logits: Var,
    pub boundary_logits: Option<Var>,
    pub rgb: Vec<StreamFeature>,
    pub frequency: Vec<StreamFeature>,
    pub fusion: Vec<FusionMap>,
    pub afs: Option<AfsOutput>,
    pub bal: Option<BalOutput>,
}

/// Region and boundary logits of one image, each `1 × H × W`.
#[derive(Clone, Debug)]
pub struct PredictionPair {
    pub region_logits: ImageTensor,
    pub boundary_logits: Option<ImageTensor>,
    pub channel_weights: Option<ChannelWeights>,
}

impl PredictionPair {
    pub fn region_probability(&self) -> ImageTensor {
        self.region_logits.map(tbnet_tensor::ops::sigmoid).with_range(ValueRange::PixelUnit)
    }

    pub fn boundary_probability(&self) -> Option<ImageTensor> {
        self.boundary_logits.as_ref().map(|b| b.map(tbnet_tensor::ops::sigmoid).with_range(ValueRange::PixelUnit))
    }
}

#[derive(Clone, Debug)]
enum Fusion {
    Acf(Acf),
    Concat(ConcatFusion),
}

#[derive(Clone, Debug)]
pub struct TbNet {
    config: NetworkConfig,
    rgb: Option<RgbEncoder>,
    afs: Option<Afs>,
    /// `(mean, std)` of dataset-level frequency normalisation.
    freq_norm: Option<(ParamId, ParamId)>,
    freq_stages: Option<ResStages>,
    fusion: Vec<Fusion>,
    bal: Option<Bal>,
    decoder: Decoder,
}

impl TbNet {
    /// Builds the network and registers its parameters in `store`.
    pub fn new<T: Float, R: Rng + ?Sized>(config: NetworkConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.afs_out_channels;
        let levels = config.level_channels();
        let rgb = if config.use_rgb { Some(RgbEncoder::new(store, "rgb", config.backbone, c, rng)?) } else { None };
        let (afs, freq_stages) = if config.use_frequency {
            (
                Some(Afs::new(store, "freq.afs", config.block_size, config.reduction, c, rng)?),
                Some(ResStages::new(store, "freq", config.backbone, c, rng)?),
            )
        } else {
            (None, None)
        };
        let freq_norm = if config.use_frequency && config.frequency_norm == FrequencyNorm::Dataset {
            let k = 3 * config.block_size * config.block_size;
            Some((
                store.add("freq.norm.mean", Tensor::zeros(&[k]), false)?,
                store.add("freq.norm.std", Tensor::full(&[k], T::one()), false)?,
            ))
        } else {
            None
        };
        let mut fusion = Vec::new();
        if config.use_rgb && config.use_frequency {
            for (i, &ch) in levels.iter().enumerate() {
                let level = i + 2;
                let path = format!("fusion.level{level}");
                fusion.push(if config.use_acf {
                    Fusion::Acf(Acf::new(store, &path, level, ch, rng)?)
                } else {
                    Fusion::Concat(ConcatFusion::new(store, &path, level, ch, rng)?)
                });
            }
        }
        let bal = if config.use_bal {
            Some(Bal::new(store, "bal", c, levels, config.bal_channels, config.bal_units, rng)?)
        } else {
            None
        };
        let decoder = Decoder::new(
            store,
            "decoder",
            levels[3],
            levels[0],
            config.skip_channels,
            if config.use_bal { config.bal_channels } else { 0 },
            config.decoder_channels,
            rng,
        )?;
        Ok(Self { config, rgb, afs, freq_norm, freq_stages, fusion, bal, decoder })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn afs(&self) -> Option<&Afs> {
        self.afs.as_ref()
    }

    /// Fits dataset-level frequency statistics on `images` and stores them.
    /// A no-op for networks without a frequency stream or with per-image statistics.
    pub fn fit_frequency_norm<T: Float>(&self, store: &mut ParamStore<T>, images: &[ImageTensor]) -> Result<()> {
        let Some((mean, std)) = self.freq_norm else {
            return Ok(());
        };
        let vols = images
            .iter()
            .map(|img| raw_frequency_volume(img, self.config.block_size))
            .collect::<Result<Vec<_>>>()?;
        let stats = fit_channel_stats(&vols)?;
        store.set(mean, Tensor::new(&[stats.mean.len()], stats.mean.iter().map(|&v| T::of(v)).collect())?)?;
        store.set(std, Tensor::new(&[stats.std.len()], stats.std.iter().map(|&v| T::of(v)).collect())?)?;
        Ok(())
    }

    /// Normalises a batch of RGB images (values in `[0, 255]`) for this network.
    pub fn prepare_input<T: Float>(&self, images: &[ImageTensor]) -> Result<NetInput<T>> {
        prepare_input(&self.config, images)
    }

    /// Runs both encoders and fuses levels 2–5.
    pub fn encoder_forward<T: Float>(
        &self,
        s: &mut Session<T>,
        input: &NetInput<T>,
    ) -> Result<(Vec<StreamFeature>, Vec<StreamFeature>, Vec<FusionMap>, Option<AfsOutput>)> {
        let mut rgb_feats = Vec::new();
        if let Some(enc) = &self.rgb {
            let x = input.rgb.clone().ok_or_else(|| Error::Config("network needs RGB input".into()))?;
            let x = s.input(x);
            for (i, v) in enc.forward(s, x).into_iter().enumerate() {
                rgb_feats.push(StreamFeature { level: i + 1, data: v, stream: Stream::Rgb });
            }
        }
        let mut freq_feats = Vec::new();
        let mut afs_out = None;
        if let (Some(afs), Some(stages)) = (&self.afs, &self.freq_stages) {
            let mut v = input.frequency.clone().ok_or_else(|| Error::Config("network needs frequency input".into()))?;
            if let Some((mean, std)) = self.freq_norm {
                let (mean, std) = (s.store.value(mean).data().to_vec(), s.store.value(std).data().to_vec());
                let (_, k, h, w) = v.dims4();
                for (i, x) in v.data_mut().iter_mut().enumerate() {
                    let c = (i / (h * w)) % k;
                    *x = (*x - mean[c]) / (std[c] + T::of(NORMALIZE_EPS));
                }
            }
            let v = s.input(v);
            let out = afs.forward(s, v)?;
            for (i, f) in stages.forward(s, out.features).into_iter().enumerate() {
                freq_feats.push(StreamFeature { level: i + 2, data: f, stream: Stream::Frequency });
            }
            afs_out = Some(out);
        }
        let fusion = if self.fusion.is_empty() {
            let single = if rgb_feats.is_empty() { &freq_feats } else { &rgb_feats[1..] };
            single.iter().map(|f| FusionMap { level: f.level, data: f.data, gates: None }).collect()
        } else {
            self.fusion
                .iter()
                .zip(freq_feats.iter().zip(&rgb_feats[1..]))
                .map(|(fu, (f, r))| match fu {
                    Fusion::Acf(a) => a.forward(s, f, r),
                    Fusion::Concat(c) => c.forward(s, f, r),
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok((rgb_feats, freq_feats, fusion, afs_out))
    }

    /// Region logits from the fusion maps and the optional boundary feature.
    pub fn decoder_forward<T: Float>(
        &self,
        s: &mut Session<T>,
        fusion: &[FusionMap],
        boundary_feature: Option<Var>,
        height: usize,
        width: usize,
    ) -> Result<Var> {
        let level = |l: usize| {
            fusion.iter().find(|m| m.level == l).map(|m| m.data).ok_or_else(|| Error::Config(format!("missing fusion level {l}")))
        };
        self.decoder.forward(s, level(5)?, level(2)?, boundary_feature, height, width)
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, input: &NetInput<T>) -> Result<ForwardOutput> {
        let (rgb, frequency, fusion, afs) = self.encoder_forward(s, input)?;
        let bal = match &self.bal {
            Some(bal) => {
                // Without the RGB stream the AFS output stands in for r_1.
                let b1 = match (rgb.first(), &afs) {
                    (Some(r1), _) => *r1,
                    (None, Some(a)) => StreamFeature { level: 1, data: a.features, stream: Stream::Frequency },
                    (None, None) => unreachable!("validated config has a stream"),
                };
                Some(bal.forward(s, &b1, &fusion, input.height, input.width)?)
            }
            None => None,
        };
        let region_logits =
            self.decoder_forward(s, &fusion, bal.as_ref().map(|b| b.feature), input.height, input.width)?;
        Ok(ForwardOutput {
            region_logits,
            boundary_logits: bal.as_ref().map(|b| b.logits),
            rgb,
            frequency,
            fusion,
            afs,
            bal,
        })
    }

    /// Eval-mode prediction, processed in chunks of `batch` images.
    pub fn predict<T: Float>(
        &self,
        store: &mut ParamStore<T>,
        images: &[ImageTensor],
        batch: usize,
    ) -> Result<Vec<PredictionPair>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(batch.max(1)) {
            let input = self.prepare_input::<T>(chunk)?;
            let mut s = Session::inference(store);
            let f = self.forward(&mut s, &input)?;
            let weights = match (&self.afs, &f.afs) {
                (Some(afs), Some(a)) => afs.channel_weights(&s, a).into_iter().map(Some).collect(),
                _ => vec![None; chunk.len()],
            };
            let region = s.value(f.region_logits);
            let boundary = f.boundary_logits.map(|b| s.value(b));
            for (n, w) in weights.into_iter().enumerate() {
                let plane = |t: &Tensor<T>| {
                    ImageTensor::new(
                        1,
                        input.height,
                        input.width,
                        t.sample(n).iter().map(|v| v.as_f64()).collect(),
                        ValueRange::Feature,
                    )
                };
                out.push(PredictionPair {
                    region_logits: plane(region)?,
                    boundary_logits: boundary.map(plane).transpose()?,
                    channel_weights: w,
                });
            }
        }
        Ok(out)
    }
}

/// One image's share of a [`NetInput`], before batching.
#[derive(Clone, Debug)]
pub struct SampleInput<T: Float> {
    pub rgb: Option<Tensor<T>>,
    pub frequency: Option<Tensor<T>>,
    pub height: usize,
    pub width: usize,
}

/// Per-image part of [`prepare_input`]; training caches these since its images never change.
pub fn prepare_sample<T: Float>(config: &NetworkConfig, img: &ImageTensor) -> Result<SampleInput<T>> {
    img.require_channels(3)?;
    if img.height() != config.input_size || img.width() != config.input_size {
        return Err(Error::Shape(format!(
            "image is {}×{}, network expects {}²",
            img.height(),
            img.width(),
            config.input_size
        )));
    }
    let rgb = config.use_rgb.then(|| normalize_rgb(img));
    let frequency = match (config.use_frequency, config.frequency_norm) {
        (false, _) => None,
        (true, FrequencyNorm::PerImage) => Some(frequency_volume(img, config.block_size)?.to_tensor()),
        // Normalised inside the forward pass with the stored statistics.
        (true, FrequencyNorm::Dataset) => Some(raw_frequency_volume(img, config.block_size)?.to_tensor()),
    };
    Ok(SampleInput { rgb, frequency, height: img.height(), width: img.width() })
}

/// Batches prepared samples.
pub fn stack_samples<T: Float>(parts: &[&SampleInput<T>]) -> Result<NetInput<T>> {
    let first = parts.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let stack = |pick: fn(&SampleInput<T>) -> Option<&Tensor<T>>| -> Result<Option<Tensor<T>>> {
        match pick(first) {
            None => Ok(None),
            Some(_) => {
                let items = parts
                    .iter()
                    .map(|p| pick(p).cloned().ok_or_else(|| Error::Data("mixed sample inputs".into())))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Some(Tensor::stack(&items)?))
            }
        }
    };
    Ok(NetInput {
        rgb: stack(|p| p.rgb.as_ref())?,
        frequency: stack(|p| p.frequency.as_ref())?,
        batch: parts.len(),
        height: first.height,
        width: first.width,
    })
}

/// See [`TbNet::prepare_input`].
pub fn prepare_input<T: Float>(config: &NetworkConfig, images: &[ImageTensor]) -> Result<NetInput<T>> {
    let parts = images.iter().map(|img| prepare_sample(config, img)).collect::<Result<Vec<_>>>()?;
    stack_samples(&parts.iter().collect::<Vec<_>>())
}

fn normalize_rgb<T: Float>(img: &ImageTensor) -> Tensor<T> {
    let hw = img.height() * img.width();
    Tensor::from_fn(&[3, img.height(), img.width()], |i| {
        let c = i / hw;
        T::of((img.data()[i] / 255.0 - RGB_MEAN[c]) / RGB_STD[c])
    })
}
