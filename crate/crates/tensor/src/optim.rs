use std::collections::HashMap;

use crate::float::Float;
use crate::graph::Gradients;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
/// `v ← μ·v + (g + λ·θ)`, `θ ← θ − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<ParamId, Tensor<T>>,
}

impl<T: Float> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self { lr, momentum, weight_decay, velocity: HashMap::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        let (lr, mu, wd) = (T::of(self.lr), T::of(self.momentum), T::of(self.weight_decay));
        let mut ids: Vec<_> = grads.params().map(|(id, _)| id).collect();
        ids.sort();
        for id in ids {
            if !store.entry(id).trainable() {
                continue;
            }
            let g = grads.param(id).expect("listed gradient");
            let value = store.value_mut(id);
            let v = self.velocity.entry(id).or_insert_with(|| Tensor::zeros(g.shape()));
            for ((p, vel), &gi) in value.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vel = *vel * mu + gi + wd * *p;
                *p -= lr * *vel;
            }
        }
    }
}
