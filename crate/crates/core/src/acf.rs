//! Adaptive cross-attention fusion.
//!
//! Two independent 1×1 convolutions read the concatenation `f_i ∥ r_i` and emit
//! one spatial logit map each. A pixel-wise two-way softmax turns them into gates
//! `A^r + A^f = 1`, and the fused map is `m_i = r_i·A^r + f_i·A^f` with the
//! single-channel gates broadcast over all feature channels.

use rand::Rng;
use tbnet_tensor::{Conv2d, ConvSpec, Float, ParamStore, Session, Var};

use crate::error::{Error, Result};

/// Which encoder produced a feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Rgb,
    Frequency,
}

/// A level-`i` encoder output.
#[derive(Clone, Copy, Debug)]
pub struct StreamFeature {
    pub level: usize,
    pub data: Var,
    pub stream: Stream,
}

/// Raw gate logits and their softmax-normalised counterparts, each `[N, 1, H_i, W_i]`.
#[derive(Clone, Copy, Debug)]
pub struct GatePair {
    pub raw_rgb: Var,
    pub raw_freq: Var,
    pub gate_rgb: Var,
    pub gate_freq: Var,
}

/// Fused level-`i` map; `gates` is absent when the level was not fused by ACF.
#[derive(Clone, Copy, Debug)]
pub struct FusionMap {
    pub level: usize,
    pub data: Var,
    pub gates: Option<GatePair>,
}

#[derive(Clone, Debug)]
pub struct Acf {
    pub gate_rgb: Conv2d,
    pub gate_freq: Conv2d,
    pub channels: usize,
    pub level: usize,
}

impl Acf {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        level: usize,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let pw = ConvSpec::default();
        Ok(Self {
            gate_rgb: Conv2d::new(store, &format!("{path}.gate_rgb"), 2 * channels, 1, 1, pw, true, rng)?,
            gate_freq: Conv2d::new(store, &format!("{path}.gate_freq"), 2 * channels, 1, 1, pw, true, rng)?,
            channels,
            level,
        })
    }

    fn check<T: Float>(&self, s: &Session<T>, f: &StreamFeature, r: &StreamFeature) -> Result<()> {
        if f.stream != Stream::Frequency || r.stream != Stream::Rgb {
            return Err(Error::Fusion("expected (frequency, rgb) feature pair".into()));
        }
        let (fs, rs) = (s.value(f.data).shape(), s.value(r.data).shape());
        if fs != rs {
            return Err(Error::Fusion(format!("level {}: frequency {fs:?} vs rgb {rs:?}", self.level)));
        }
        if fs[1] != self.channels {
            return Err(Error::Fusion(format!("level {}: built for {} channels, got {}", self.level, self.channels, fs[1])));
        }
        Ok(())
    }

    /// `G^r = C(f ∥ r)`, `G^f = C′(f ∥ r)`, then the pixel-wise softmax.
    pub fn compute_gates<T: Float>(&self, s: &mut Session<T>, f: &StreamFeature, r: &StreamFeature) -> Result<GatePair> {
        self.check(s, f, r)?;
        let cross = s.graph.concat_channels(&[f.data, r.data]);
        let raw_rgb = self.gate_rgb.forward(s, cross);
        let raw_freq = self.gate_freq.forward(s, cross);
        let pair = s.graph.softmax_pair(raw_rgb, raw_freq);
        let gate_rgb = s.graph.narrow_channels(pair, 0, 1);
        let gate_freq = s.graph.narrow_channels(pair, 1, 1);
        Ok(GatePair { raw_rgb, raw_freq, gate_rgb, gate_freq })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, f: &StreamFeature, r: &StreamFeature) -> Result<FusionMap> {
        let gates = self.compute_gates(s, f, r)?;
        fuse(s, f, r, gates)
    }
}

/// `m = r·A^r + f·A^f`.
pub fn fuse<T: Float>(s: &mut Session<T>, f: &StreamFeature, r: &StreamFeature, gates: GatePair) -> Result<FusionMap> {
    let (fs, rs) = (s.value(f.data).shape().to_vec(), s.value(r.data).shape().to_vec());
    if fs != rs {
        return Err(Error::Fusion(format!("frequency {fs:?} vs rgb {rs:?}")));
    }
    let gs = s.value(gates.gate_rgb).shape();
    if gs != [fs[0], 1, fs[2], fs[3]] || s.value(gates.gate_freq).shape() != gs {
        return Err(Error::Fusion(format!("gate shape {gs:?} does not match features {fs:?}")));
    }
    let a = s.graph.mul_spatial(r.data, gates.gate_rgb);
    let b = s.graph.mul_spatial(f.data, gates.gate_freq);
    Ok(FusionMap { level: r.level, data: s.graph.add(a, b), gates: Some(gates) })
}

/// Plain concatenation + 1×1 projection, the fusion used without ACF.
#[derive(Clone, Debug)]
pub struct ConcatFusion {
    pub proj: Conv2d,
    pub level: usize,
}

impl ConcatFusion {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        level: usize,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            proj: Conv2d::new(store, &format!("{path}.proj"), 2 * channels, channels, 1, ConvSpec::default(), true, rng)?,
            level,
        })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, f: &StreamFeature, r: &StreamFeature) -> Result<FusionMap> {
        if s.value(f.data).shape() != s.value(r.data).shape() {
            return Err(Error::Fusion(format!("level {}: stream shapes differ", self.level)));
        }
        let cat = s.graph.concat_channels(&[f.data, r.data]);
        Ok(FusionMap { level: self.level, data: self.proj.forward(s, cat), gates: None })
    }
}
