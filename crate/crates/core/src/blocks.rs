//! Convolution building blocks shared by the backbone, boundary stream and decoder.

use rand::Rng;
use tbnet_tensor::{BatchNorm2d, Conv2d, ConvSpec, Float, ParamStore, Session, Var};

use crate::error::Result;

/// Bias-free convolution followed by batch norm and an optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub relu: bool,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: ConvSpec,
        relu: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &format!("{path}.conv"), cin, cout, kernel, spec, false, rng)?,
            bn: BatchNorm2d::new(store, &format!("{path}.bn"), cout)?,
            relu,
        })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, x: Var) -> Var {
        let y = self.conv.forward(s, x);
        let y = self.bn.forward(s, y);
        if self.relu {
            s.graph.relu(y)
        } else {
            y
        }
    }
}

/// Two 3×3 conv-BN stages with an identity (or 1×1-projected) skip.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    conv1: ConvBn,
    conv2: ConvBn,
    downsample: Option<ConvBn>,
}

impl BasicBlock {
    pub const EXPANSION: usize = 1;

    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        cin: usize,
        planes: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let s3 = ConvSpec { stride, padding: 1, ..ConvSpec::default() };
        let downsample = if stride != 1 || cin != planes {
            let spec = ConvSpec { stride, ..ConvSpec::default() };
            Some(ConvBn::new(store, &format!("{path}.downsample"), cin, planes, 1, spec, false, rng)?)
        } else {
            None
        };
        Ok(Self {
            conv1: ConvBn::new(store, &format!("{path}.conv1"), cin, planes, 3, s3, true, rng)?,
            conv2: ConvBn::new(store, &format!("{path}.conv2"), planes, planes, 3, ConvSpec::same(3), false, rng)?,
            downsample,
        })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, x: Var) -> Var {
        let y = self.conv1.forward(s, x);
        let y = self.conv2.forward(s, y);
        let skip = match &self.downsample {
            Some(d) => d.forward(s, x),
            None => x,
        };
        let y = s.graph.add(y, skip);
        s.graph.relu(y)
    }
}

/// 1×1 → 3×3 → 1×1 bottleneck with 4× channel expansion.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    conv1: ConvBn,
    conv2: ConvBn,
    conv3: ConvBn,
    downsample: Option<ConvBn>,
}

impl Bottleneck {
    pub const EXPANSION: usize = 4;

    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        cin: usize,
        planes: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let out = planes * Self::EXPANSION;
        let downsample = if stride != 1 || cin != out {
            let spec = ConvSpec { stride, ..ConvSpec::default() };
            Some(ConvBn::new(store, &format!("{path}.downsample"), cin, out, 1, spec, false, rng)?)
        } else {
            None
        };
        let s3 = ConvSpec { stride, padding: 1, ..ConvSpec::default() };
        Ok(Self {
            conv1: ConvBn::new(store, &format!("{path}.conv1"), cin, planes, 1, ConvSpec::default(), true, rng)?,
            conv2: ConvBn::new(store, &format!("{path}.conv2"), planes, planes, 3, s3, true, rng)?,
            conv3: ConvBn::new(store, &format!("{path}.conv3"), planes, out, 1, ConvSpec::default(), false, rng)?,
            downsample,
        })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, x: Var) -> Var {
        let y = self.conv1.forward(s, x);
        let y = self.conv2.forward(s, y);
        let y = self.conv3.forward(s, y);
        let skip = match &self.downsample {
            Some(d) => d.forward(s, x),
            None => x,
        };
        let y = s.graph.add(y, skip);
        s.graph.relu(y)
    }
}
