//! Composite training objective.
//!
//! Region and boundary predictions are scored with class-balanced binary
//! cross-entropy; a third term re-scores the region prediction on tamper-edge
//! pixels only. Every function returns the loss value together with its
//! gradient with respect to the logits, so the terms can be attached to a tape
//! as closed-form nodes.

use serde::{Deserialize, Serialize};
use tbnet_tensor::{ops::sigmoid, Float, Graph, Tensor, Var};

use crate::error::{Error, Result};
use crate::image::BinaryMask;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the logarithm.
pub const PROB_EPS: f64 = 1e-7;
/// Bounds on the class-balance weight β.
pub const BETA_MIN: f64 = 0.05;
pub const BETA_MAX: f64 = 0.95;

/// A scalar loss and its gradient with respect to each logit.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub region: f64,
    pub boundary: f64,
    pub aware: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self { region: 0.05, boundary: 0.05, aware: 0.9 }
    }
}

/// All loss terms of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub total: f64,
    pub region: f64,
    pub boundary: f64,
    pub aware: f64,
    pub lambdas: Lambdas,
    /// `(w1, w2)` used by the edge term (mean over the batch).
    pub class_weights: (f64, f64),
}

impl LossBundle {
    /// Recombines the three terms with `lambdas`.
    pub fn from_terms(region: f64, boundary: f64, aware: f64, lambdas: Lambdas, class_weights: (f64, f64)) -> Self {
        let total = lambdas.region * region + lambdas.boundary * boundary + lambdas.aware * aware;
        Self { total, region, boundary, aware, lambdas, class_weights }
    }
}

fn clamp_prob(p: f64) -> (f64, bool) {
    if p < PROB_EPS {
        (PROB_EPS, true)
    } else if p > 1.0 - PROB_EPS {
        (1.0 - PROB_EPS, true)
    } else {
        (p, false)
    }
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} logits vs {b} labels")));
    }
    Ok(())
}

/// β = (#negatives / #pixels), clamped to `[BETA_MIN, BETA_MAX]`.
pub fn class_balance(target: &[u8]) -> f64 {
    if target.is_empty() {
        return 0.5;
    }
    let neg = target.iter().filter(|&&y| y == 0).count();
    (neg as f64 / target.len() as f64).clamp(BETA_MIN, BETA_MAX)
}

/// Shared cross-entropy kernel: `-(1/norm) Σ_i sel_i [w1 y log p + w2 (1-y) log(1-p)]`.
fn masked_bce(logits: &[f64], target: &[u8], select: Option<&[u8]>, w1: f64, w2: f64, norm: f64) -> LossValue {
    let mut value = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (i, (&z, &y)) in logits.iter().zip(target).enumerate() {
        if select.is_some_and(|s| s[i] == 0) {
            continue;
        }
        let (p, clamped) = clamp_prob(sigmoid(z));
        if y != 0 {
            value -= w1 * p.ln();
            if !clamped {
                grad[i] = -w1 * (1.0 - p) / norm;
            }
        } else {
            value -= w2 * (1.0 - p).ln();
            if !clamped {
                grad[i] = w2 * p / norm;
            }
        }
    }
    LossValue { value: value / norm, grad }
}

/// Class-balanced binary cross-entropy, averaged over pixels.
pub fn weighted_bce(logits: &[f64], target: &[u8]) -> Result<LossValue> {
    check_len("weighted_bce", logits.len(), target.len())?;
    if target.is_empty() {
        return Ok(LossValue { value: 0.0, grad: Vec::new() });
    }
    let beta = class_balance(target);
    Ok(masked_bce(logits, target, None, beta, 1.0 - beta, target.len() as f64))
}

/// `(w1, w2) = (β, 1-β)` with β the negative fraction of `region_gt` over edge pixels.
pub fn edge_class_weights(region_gt: &[u8], edge_gt: &[u8]) -> (f64, f64) {
    let on_edge: Vec<u8> = region_gt.iter().zip(edge_gt).filter(|(_, &u)| u != 0).map(|(&y, _)| y).collect();
    let beta = class_balance(&on_edge);
    (beta, 1.0 - beta)
}

/// Region cross-entropy restricted to edge pixels, normalised by the full pixel count.
pub fn boundary_aware_loss(logits: &[f64], region_gt: &[u8], edge_gt: &[u8], w1: f64, w2: f64) -> Result<LossValue> {
    check_len("boundary_aware_loss", logits.len(), region_gt.len())?;
    check_len("boundary_aware_loss", logits.len(), edge_gt.len())?;
    if !edge_gt.iter().any(|&u| u != 0) {
        return Ok(LossValue { value: 0.0, grad: vec![0.0; logits.len()] });
    }
    Ok(masked_bce(logits, region_gt, Some(edge_gt), w1, w2, logits.len() as f64))
}

/// Per-term values and logit gradients for one image.
#[derive(Clone, Debug)]
pub struct TotalLoss {
    pub bundle: LossBundle,
    /// Gradient of the total with respect to the region logits.
    pub region_grad: Vec<f64>,
    /// Gradient of the total with respect to the boundary logits, if present.
    pub boundary_grad: Option<Vec<f64>>,
}

/// Weighted sum of the three terms. Without boundary logits the boundary term is 0.
pub fn total_loss(
    region_logits: &[f64],
    boundary_logits: Option<&[f64]>,
    region_gt: &[u8],
    edge_gt: &[u8],
    lambdas: Lambdas,
) -> Result<TotalLoss> {
    let region = weighted_bce(region_logits, region_gt)?;
    let boundary = boundary_logits.map(|b| weighted_bce(b, edge_gt)).transpose()?;
    let (w1, w2) = edge_class_weights(region_gt, edge_gt);
    let aware = boundary_aware_loss(region_logits, region_gt, edge_gt, w1, w2)?;
    let region_grad = region
        .grad
        .iter()
        .zip(&aware.grad)
        .map(|(r, a)| lambdas.region * r + lambdas.aware * a)
        .collect();
    let boundary_grad = boundary.as_ref().map(|b| b.grad.iter().map(|g| lambdas.boundary * g).collect());
    let bundle = LossBundle::from_terms(
        region.value,
        boundary.map_or(0.0, |b| b.value),
        aware.value,
        lambdas,
        (w1, w2),
    );
    Ok(TotalLoss { bundle, region_grad, boundary_grad })
}

/// Batch mean of [`total_loss`] attached to the tape. `region` and `boundary`
/// are `[N, 1, H, W]` logits; returns the scalar total and the averaged terms.
pub fn attach_total_loss<T: Float>(
    graph: &mut Graph<T>,
    region: Var,
    boundary: Option<Var>,
    region_gt: &[BinaryMask],
    edge_gt: &[BinaryMask],
    lambdas: Lambdas,
) -> Result<(Var, LossBundle)> {
    let n = graph.shape(region)[0];
    if region_gt.len() != n || edge_gt.len() != n {
        return Err(Error::Shape(format!("{n} predictions vs {} / {} masks", region_gt.len(), edge_gt.len())));
    }
    let per = graph.value(region).len() / n.max(1);
    let mut rgrad = Vec::with_capacity(n * per);
    let mut bgrad = Vec::with_capacity(if boundary.is_some() { n * per } else { 0 });
    let mut sums = [0.0f64; 5];
    let inv = 1.0 / n as f64;
    for i in 0..n {
        let rl: Vec<f64> = graph.value(region).sample(i).iter().map(|v| v.as_f64()).collect();
        let bl: Option<Vec<f64>> = boundary.map(|b| graph.value(b).sample(i).iter().map(|v| v.as_f64()).collect());
        let t = total_loss(&rl, bl.as_deref(), region_gt[i].data(), edge_gt[i].data(), lambdas)?;
        rgrad.extend(t.region_grad.iter().map(|g| T::of(g * inv)));
        if let Some(g) = &t.boundary_grad {
            bgrad.extend(g.iter().map(|g| T::of(g * inv)));
        }
        let b = t.bundle;
        for (s, v) in sums.iter_mut().zip([b.region, b.boundary, b.aware, b.class_weights.0, b.class_weights.1]) {
            *s += v * inv;
        }
    }
    let bundle = LossBundle::from_terms(sums[0], sums[1], sums[2], lambdas, (sums[3], sums[4]));
    let region_value = lambdas.region * sums[0] + lambdas.aware * sums[2];
    let rshape = graph.shape(region).to_vec();
    let mut total = graph.external_scalar(region, T::of(region_value), Tensor::new(&rshape, rgrad)?);
    if let Some(b) = boundary {
        let bshape = graph.shape(b).to_vec();
        let bnode = graph.external_scalar(b, T::of(lambdas.boundary * sums[1]), Tensor::new(&bshape, bgrad)?);
        total = graph.add(total, bnode);
    }
    Ok((total, bundle))
}
