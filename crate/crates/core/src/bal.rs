//! Boundary artifact localisation stream.
//!
//! A full-resolution chain of boundary units. `b_1` is the RGB conv1-x map
//! brought up to `H×W`; each unit runs a residual block, then a gated
//! convolution layer that reads a fusion map:
//!
//! ```text
//! ν_t     = sigmoid(BN(C₁ₓ₁(m ∥ b_t)))
//! b_{t+1} = w_tᵀ (b_t ⊙ ν_t + b_t)
//! ```
//!
//! Unit `t` consumes fusion level `min(t + 2, 5)`; the deepest map is reused
//! once the encoder runs out of levels.

use rand::Rng;
use tbnet_tensor::{BatchNorm2d, Conv2d, ConvSpec, Float, ParamStore, Session, Var};

use crate::acf::{FusionMap, StreamFeature};
use crate::blocks::BasicBlock;
use crate::error::{Error, Result};

/// Deepest encoder level available for fusion.
pub const DEEPEST_LEVEL: usize = 5;

/// Fusion level read by boundary unit `t` (1-based).
pub fn fusion_level_for_unit(t: usize) -> usize {
    (t + 2).min(DEEPEST_LEVEL)
}

/// State flowing between boundary units.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryState {
    pub t: usize,
    /// `b_t`, `[N, C_b, H, W]`.
    pub feature: Var,
    /// `ν` of the gate that produced this state, `[N, 1, H, W]`.
    pub attention: Option<Var>,
}

/// 1×1 projection of `r_1` to `C_b` channels followed by bilinear upsampling to
/// `H×W`. The projection is applied first; both maps are linear and the
/// bilinear weights sum to one, so the order does not change the result.
#[derive(Clone, Debug)]
pub struct BoundaryInput {
    pub proj: Conv2d,
}

impl BoundaryInput {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        in_channels: usize,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self { proj: Conv2d::new(store, &format!("{path}.proj"), in_channels, channels, 1, ConvSpec::default(), true, rng)? })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, r1: &StreamFeature, height: usize, width: usize) -> BoundaryState {
        let y = self.proj.forward(s, r1.data);
        BoundaryState { t: 1, feature: s.graph.resize_bilinear(y, height, width), attention: None }
    }
}

/// Gated convolution layer.
#[derive(Clone, Debug)]
pub struct Gcl {
    pub gate_conv: Conv2d,
    pub gate_bn: BatchNorm2d,
    /// Channel-wise kernel `w_t` (1×1, no bias).
    pub channel_weight: Conv2d,
}

impl Gcl {
    pub fn new<T: Float, R: Rng + ?Sized>(store: &mut ParamStore<T>, path: &str, channels: usize, rng: &mut R) -> Result<Self> {
        let pw = ConvSpec::default();
        Ok(Self {
            gate_conv: Conv2d::new(store, &format!("{path}.gate_conv"), 2 * channels, 1, 1, pw, true, rng)?,
            gate_bn: BatchNorm2d::new(store, &format!("{path}.gate_bn"), 1)?,
            channel_weight: Conv2d::new(store, &format!("{path}.channel_weight"), channels, channels, 1, pw, false, rng)?,
        })
    }

    /// `m` must already be at the resolution of `b_t` with `C_b` channels.
    pub fn forward<T: Float>(&self, s: &mut Session<T>, b: &BoundaryState, m: Var) -> Result<BoundaryState> {
        let (bs, ms) = (s.value(b.feature).shape(), s.value(m).shape());
        if bs != ms {
            return Err(Error::Shape(format!("gated conv: fusion map {ms:?} must match boundary feature {bs:?}")));
        }
        let cat = s.graph.concat_channels(&[m, b.feature]);
        let g = self.gate_conv.forward(s, cat);
        let g = self.gate_bn.forward(s, g);
        let nu = s.graph.sigmoid(g);
        let gated = s.graph.mul_spatial(b.feature, nu);
        let res = s.graph.add(gated, b.feature);
        let next = self.channel_weight.forward(s, res);
        Ok(BoundaryState { t: b.t + 1, feature: next, attention: Some(nu) })
    }
}

/// Residual block, fusion-map adapter and gated conv of one unit.
#[derive(Clone, Debug)]
pub struct BoundaryUnit {
    pub res: BasicBlock,
    pub fusion_proj: Conv2d,
    pub gcl: Gcl,
    pub level: usize,
}

impl BoundaryUnit {
    pub fn forward<T: Float>(&self, s: &mut Session<T>, b: &BoundaryState, m: &FusionMap) -> Result<BoundaryState> {
        let (height, width) = {
            let sh = s.value(b.feature).shape();
            (sh[2], sh[3])
        };
        let refined = BoundaryState { feature: self.res.forward(s, b.feature), ..*b };
        let proj = self.fusion_proj.forward(s, m.data);
        let up = s.graph.resize_bilinear(proj, height, width);
        self.gcl.forward(s, &refined, up)
    }
}

/// Output of the whole stream.
#[derive(Clone, Debug)]
pub struct BalOutput {
    /// `[N, 1, H, W]`.
    pub logits: Var,
    /// Final boundary feature `b_{T+1}`, `[N, C_b, H, W]`, forwarded to the decoder.
    pub feature: Var,
    pub states: Vec<BoundaryState>,
}

#[derive(Clone, Debug)]
pub struct Bal {
    pub input: BoundaryInput,
    pub units: Vec<BoundaryUnit>,
    pub head: Conv2d,
    pub channels: usize,
}

impl Bal {
    /// `level_channels[i]` is the channel count of fusion level `i + 2`.
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        r1_channels: usize,
        level_channels: [usize; 4],
        channels: usize,
        units: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if units == 0 {
            return Err(Error::Config("boundary stream needs at least one unit".into()));
        }
        let input = BoundaryInput::new(store, &format!("{path}.input"), r1_channels, channels, rng)?;
        let units = (1..=units)
            .map(|t| {
                let upath = format!("{path}.unit{t}");
                let level = fusion_level_for_unit(t);
                Ok(BoundaryUnit {
                    res: BasicBlock::new(store, &format!("{upath}.res"), channels, channels, 1, rng)?,
                    fusion_proj: Conv2d::new(
                        store,
                        &format!("{upath}.fusion_proj"),
                        level_channels[level - 2],
                        channels,
                        1,
                        ConvSpec::default(),
                        true,
                        rng,
                    )?,
                    gcl: Gcl::new(store, &format!("{upath}.gcl"), channels, rng)?,
                    level,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Conv2d::new(store, &format!("{path}.head"), channels, 1, 1, ConvSpec::default(), true, rng)?;
        Ok(Self { input, units, head, channels })
    }

    /// Runs all units at `height × width`. `fusion` must hold levels 2–5 (any order).
    pub fn forward<T: Float>(
        &self,
        s: &mut Session<T>,
        r1: &StreamFeature,
        fusion: &[FusionMap],
        height: usize,
        width: usize,
    ) -> Result<BalOutput> {
        let mut state = self.input.forward(s, r1, height, width);
        let mut states = vec![state];
        for unit in &self.units {
            let m = fusion
                .iter()
                .find(|m| m.level == unit.level)
                .ok_or_else(|| Error::Config(format!("boundary unit needs fusion level {}", unit.level)))?;
            state = unit.forward(s, &state, m)?;
            states.push(state);
        }
        let logits = self.head.forward(s, state.feature);
        Ok(BalOutput { logits, feature: state.feature, states })
    }
}
