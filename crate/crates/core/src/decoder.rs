//! Encoder-decoder segmentation head.
//!
//! An atrous pyramid runs on `m_5`, is upsampled to the `m_2` grid and joined
//! with a projected `m_2` skip and the boundary feature resampled to the same
//! grid. Two 3×3 conv-BN-ReLU layers and a 1×1 classifier follow; the logits
//! are finally upsampled to the input size.
//!
//! With a boundary stream, a small full-resolution head then sees the
//! upsampled logits next to the boundary feature and adds a correction. The
//! coarse grid alone cannot place a sharp step between two adjacent pixels,
//! which is exactly what the boundary-ring loss asks for. The correction's
//! last conv starts at zero so an untrained model matches the plain path.

use rand::Rng;
use tbnet_tensor::{Conv2d, ConvSpec, Float, ParamStore, Session, Tensor, Var};

use crate::blocks::ConvBn;
use crate::error::{Error, Result};

/// Dilation rates of the 3×3 pyramid branches; a plain 1×1 branch sits alongside.
pub const ATROUS_RATES: [usize; 3] = [6, 12, 18];

#[derive(Clone, Debug)]
pub struct Aspp {
    pub branches: Vec<ConvBn>,
    pub project: ConvBn,
}

impl Aspp {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut branches = vec![ConvBn::new(store, &format!("{path}.branch0"), cin, cout, 1, ConvSpec::default(), true, rng)?];
        for (i, &rate) in ATROUS_RATES.iter().enumerate() {
            let spec = ConvSpec { padding: rate, dilation: rate, ..ConvSpec::default() };
            branches.push(ConvBn::new(store, &format!("{path}.branch{}", i + 1), cin, cout, 3, spec, true, rng)?);
        }
        let project = ConvBn::new(store, &format!("{path}.project"), cout * branches.len(), cout, 1, ConvSpec::default(), true, rng)?;
        Ok(Self { branches, project })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, x: Var) -> Var {
        let outs: Vec<Var> = self.branches.iter().map(|b| b.forward(s, x)).collect();
        let cat = s.graph.concat_channels(&outs);
        self.project.forward(s, cat)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub aspp: Aspp,
    pub skip: ConvBn,
    pub refine1: ConvBn,
    pub refine2: ConvBn,
    pub classifier: Conv2d,
    /// Channels of the boundary feature, 0 when the model has no boundary stream.
    pub boundary_channels: usize,
    pub edge_refine: Option<EdgeRefine>,
}

/// Full-resolution residual correction driven by the boundary feature.
#[derive(Clone, Debug)]
pub struct EdgeRefine {
    pub hidden: ConvBn,
    pub out: Conv2d,
}

/// Hidden width of the edge correction head.
pub const EDGE_REFINE_WIDTH: usize = 8;

impl EdgeRefine {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        boundary_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let same = ConvSpec::same(3);
        let hidden = ConvBn::new(store, &format!("{path}.hidden"), boundary_channels + 1, EDGE_REFINE_WIDTH, 3, same, true, rng)?;
        let out = Conv2d::new(store, &format!("{path}.out"), EDGE_REFINE_WIDTH, 1, 3, same, true, rng)?;
        store.set(out.weight, Tensor::zeros(&[1, EDGE_REFINE_WIDTH, 3, 3]))?;
        Ok(Self { hidden, out })
    }

    /// `coarse` is `[N, 1, H, W]`, `boundary` is `[N, C_b, H, W]`.
    pub fn forward<T: Float>(&self, s: &mut Session<T>, coarse: Var, boundary: Var) -> Var {
        let x = s.graph.concat_channels(&[coarse, boundary]);
        let x = self.hidden.forward(s, x);
        let delta = self.out.forward(s, x);
        s.graph.add(coarse, delta)
    }
}

impl Decoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        deep_channels: usize,
        skip_in: usize,
        skip_out: usize,
        boundary_channels: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let same = ConvSpec::same(3);
        let joined = width + skip_out + boundary_channels;
        Ok(Self {
            aspp: Aspp::new(store, &format!("{path}.aspp"), deep_channels, width, rng)?,
            skip: ConvBn::new(store, &format!("{path}.skip"), skip_in, skip_out, 1, ConvSpec::default(), true, rng)?,
            refine1: ConvBn::new(store, &format!("{path}.refine1"), joined, width, 3, same, true, rng)?,
            refine2: ConvBn::new(store, &format!("{path}.refine2"), width, width, 3, same, true, rng)?,
            classifier: Conv2d::new(store, &format!("{path}.classifier"), width, 1, 1, ConvSpec::default(), true, rng)?,
            boundary_channels,
            edge_refine: if boundary_channels > 0 {
                Some(EdgeRefine::new(store, &format!("{path}.edge_refine"), boundary_channels, rng)?)
            } else {
                None
            },
        })
    }

    /// `m5` and `m2` are the deepest and shallowest fusion maps; the result is `[N, 1, height, width]`.
    pub fn forward<T: Float>(
        &self,
        s: &mut Session<T>,
        m5: Var,
        m2: Var,
        boundary: Option<Var>,
        height: usize,
        width: usize,
    ) -> Result<Var> {
        let (sh, sw) = {
            let sh = s.value(m2).shape();
            (sh[2], sh[3])
        };
        let ctx = self.aspp.forward(s, m5);
        let ctx = s.graph.resize_bilinear(ctx, sh, sw);
        let skip = self.skip.forward(s, m2);
        let mut parts = vec![ctx, skip];
        let mut full_boundary = None;
        match (boundary, self.boundary_channels) {
            (None, 0) => {}
            (Some(b), c) if c > 0 => {
                full_boundary = Some(b);
                let got = s.value(b).shape()[1];
                if got != c {
                    return Err(Error::Shape(format!("decoder expects {c} boundary channels, got {got}")));
                }
                parts.push(s.graph.resize_bilinear(b, sh, sw));
            }
            (Some(_), _) => return Err(Error::Config("decoder was built without a boundary input".into())),
            (None, c) => return Err(Error::Config(format!("decoder needs a {c}-channel boundary feature"))),
        }
        let x = s.graph.concat_channels(&parts);
        let x = self.refine1.forward(s, x);
        let x = self.refine2.forward(s, x);
        let logits = self.classifier.forward(s, x);
        let logits = s.graph.resize_bilinear(logits, height, width);
        match (&self.edge_refine, full_boundary) {
            (Some(head), Some(b)) => {
                let b = {
                    let bs = s.value(b).shape();
                    if bs[2] == height && bs[3] == width { b } else { s.graph.resize_bilinear(b, height, width) }
                };
                Ok(head.forward(s, logits, b))
            }
            _ => Ok(logits),
        }
    }
}
