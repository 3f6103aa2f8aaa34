//! Parameterised building blocks that register their tensors in a [`ParamStore`].

use rand::Rng;

use crate::error::Result;
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::ops::ConvSpec;
use crate::params::{kaiming_normal, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates.
    Train,
    /// Running statistics; pure.
    Eval,
}

/// One forward pass: the tape, the parameters it reads, and the BN mode.
pub struct Session<'s, T: Float> {
    pub graph: Graph<T>,
    pub store: &'s mut ParamStore<T>,
    pub mode: Mode,
}

impl<'s, T: Float> Session<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, mode: Mode) -> Self {
        Self { graph: Graph::new(), store, mode }
    }

    /// Eval-mode session without backward bookkeeping.
    pub fn inference(store: &'s mut ParamStore<T>) -> Self {
        Self { graph: Graph::inference(), store, mode: Mode::Eval }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.graph.param(self.store, id)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.graph.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.graph.value(v)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        spec: ConvSpec,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let cg = in_channels / spec.groups;
        let fan_in = cg * kernel * kernel;
        let weight = store.add(
            format!("{path}.weight"),
            kaiming_normal(&[out_channels, cg, kernel, kernel], fan_in, rng),
            true,
        )?;
        let bias = if bias {
            Some(store.add(format!("{path}.bias"), Tensor::zeros(&[out_channels]), true)?)
        } else {
            None
        };
        Ok(Self { weight, bias, spec, in_channels, out_channels, kernel })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, x: Var) -> Var {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        s.graph.conv2d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new<T: Float>(store: &mut ParamStore<T>, path: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{path}.gamma"), Tensor::full(&[channels], T::one()), true)?,
            beta: store.add(format!("{path}.beta"), Tensor::zeros(&[channels]), true)?,
            running_mean: store.add(format!("{path}.running_mean"), Tensor::zeros(&[channels]), false)?,
            running_var: store.add(format!("{path}.running_var"), Tensor::full(&[channels], T::one()), false)?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, x: Var) -> Var {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        let eps = T::of(self.eps);
        match s.mode {
            Mode::Train => {
                let (y, stats) = s.graph.batch_norm_train(x, gamma, beta, eps);
                let mom = T::of(self.momentum);
                let unbias = if stats.count > 1 {
                    T::of(stats.count as f64 / (stats.count - 1) as f64)
                } else {
                    T::one()
                };
                let rm = s.store.value_mut(self.running_mean);
                for (r, &m) in rm.data_mut().iter_mut().zip(&stats.mean) {
                    *r = *r * (T::one() - mom) + m * mom;
                }
                let rv = s.store.value_mut(self.running_var);
                for (r, &v) in rv.data_mut().iter_mut().zip(&stats.var) {
                    *r = *r * (T::one() - mom) + v * unbias * mom;
                }
                y
            }
            Mode::Eval => {
                let mean = s.store.value(self.running_mean).data().to_vec();
                let var = s.store.value(self.running_var).data().to_vec();
                s.graph.batch_norm_eval(x, gamma, beta, &mean, &var, eps)
            }
        }
    }
}
