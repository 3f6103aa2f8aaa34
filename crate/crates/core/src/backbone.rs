//! ResNet-shaped encoder stages (conv2-x … conv5-x) and the RGB stem (conv1-x).

use rand::Rng;
use serde::{Deserialize, Serialize};
use tbnet_tensor::{ConvSpec, Float, ParamStore, Session, Var};

use crate::blocks::{BasicBlock, Bottleneck, ConvBn};
use crate::error::Result;

/// Block layout of the backbone. Widths scale with the network's base width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackboneDepth {
    #[serde(rename = "resnet18-shape", alias = "resnet18")]
    Resnet18,
    #[serde(rename = "resnet50-shape", alias = "resnet50")]
    Resnet50,
    #[serde(rename = "resnet101-shape", alias = "resnet101")]
    Resnet101,
}

impl BackboneDepth {
    pub fn blocks(self) -> [usize; 4] {
        match self {
            Self::Resnet18 => [2, 2, 2, 2],
            Self::Resnet50 => [3, 4, 6, 3],
            Self::Resnet101 => [3, 4, 23, 3],
        }
    }

    pub fn expansion(self) -> usize {
        match self {
            Self::Resnet18 => BasicBlock::EXPANSION,
            Self::Resnet50 | Self::Resnet101 => Bottleneck::EXPANSION,
        }
    }

    /// Output channels of conv2-x … conv5-x.
    pub fn stage_channels(self, base_width: usize) -> [usize; 4] {
        let e = self.expansion();
        [base_width * e, base_width * 2 * e, base_width * 4 * e, base_width * 8 * e]
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Resnet18 => "resnet18-shape",
            Self::Resnet50 => "resnet50-shape",
            Self::Resnet101 => "resnet101-shape",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "resnet18-shape" | "resnet18" => Some(Self::Resnet18),
            "resnet50-shape" | "resnet50" => Some(Self::Resnet50),
            "resnet101-shape" | "resnet101" => Some(Self::Resnet101),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
enum Block {
    Basic(BasicBlock),
    Bottleneck(Bottleneck),
}

impl Block {
    fn forward<T: Float>(&self, s: &mut Session<T>, x: Var) -> Var {
        match self {
            Block::Basic(b) => b.forward(s, x),
            Block::Bottleneck(b) => b.forward(s, x),
        }
    }
}

/// conv2-x … conv5-x. Input is the quarter-resolution map with `base_width`
/// channels; outputs are at 1/4, 1/8, 1/16 and 1/32 of the image size.
#[derive(Clone, Debug)]
pub struct ResStages {
    stages: Vec<Vec<Block>>,
    pub channels: [usize; 4],
}

impl ResStages {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        depth: BackboneDepth,
        base_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut cin = base_width;
        let mut stages = Vec::new();
        for (i, &count) in depth.blocks().iter().enumerate() {
            let planes = base_width << i;
            let mut blocks = Vec::with_capacity(count);
            for b in 0..count {
                let stride = if i > 0 && b == 0 { 2 } else { 1 };
                let bpath = format!("{path}.layer{}.{b}", i + 1);
                let block = match depth {
                    BackboneDepth::Resnet18 => Block::Basic(BasicBlock::new(store, &bpath, cin, planes, stride, rng)?),
                    _ => Block::Bottleneck(Bottleneck::new(store, &bpath, cin, planes, stride, rng)?),
                };
                cin = planes * depth.expansion();
                blocks.push(block);
            }
            stages.push(blocks);
        }
        Ok(Self { stages, channels: depth.stage_channels(base_width) })
    }

    /// Returns the four stage outputs (levels 2–5).
    pub fn forward<T: Float>(&self, s: &mut Session<T>, x: Var) -> Vec<Var> {
        let mut outs = Vec::with_capacity(4);
        let mut h = x;
        for blocks in &self.stages {
            for b in blocks {
                h = b.forward(s, h);
            }
            outs.push(h);
        }
        outs
    }
}

/// conv1-x of the RGB stream: 7×7 stride-2 conv, BN, ReLU (half resolution).
#[derive(Clone, Debug)]
pub struct Stem {
    conv: ConvBn,
}

impl Stem {
    pub fn new<T: Float, R: Rng + ?Sized>(store: &mut ParamStore<T>, path: &str, width: usize, rng: &mut R) -> Result<Self> {
        let spec = ConvSpec { stride: 2, padding: 3, ..ConvSpec::default() };
        Ok(Self { conv: ConvBn::new(store, &format!("{path}.conv1"), 3, width, 7, spec, true, rng)? })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, x: Var) -> Var {
        self.conv.forward(s, x)
    }
}

/// RGB stream: stem → max-pool → four stages. Yields `r_1 … r_5`.
#[derive(Clone, Debug)]
pub struct RgbEncoder {
    stem: Stem,
    stages: ResStages,
}

impl RgbEncoder {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        depth: BackboneDepth,
        base_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            stem: Stem::new(store, path, base_width, rng)?,
            stages: ResStages::new(store, path, depth, base_width, rng)?,
        })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, image: Var) -> Vec<Var> {
        let r1 = self.stem.forward(s, image);
        let pooled = s.graph.max_pool2d(r1, 3, 2, 1);
        let mut out = vec![r1];
        out.extend(self.stages.forward(s, pooled));
        out
    }

    pub fn channels(&self) -> [usize; 4] {
        self.stages.channels
    }
}
