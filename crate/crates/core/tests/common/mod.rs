#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tbnet_core::{ImageTensor, ValueRange};
use tbnet_tensor::gradcheck::{check_params, spread_indices};
use tbnet_tensor::{Graph, ParamStore, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    ImageTensor::new(3, h, w, (0..3 * h * w).map(|_| rng.random_range(0.0..255.0)).collect(), ValueRange::Pixel255).unwrap()
}

pub fn set(store: &mut ParamStore<f64>, name: &str, shape: &[usize], data: Vec<f64>) {
    let id = store.id(name).unwrap_or_else(|_| panic!("no parameter {name}"));
    store.set(id, Tensor::new(shape, data).unwrap()).unwrap();
}

pub fn fill(store: &mut ParamStore<f64>, name: &str, value: f64) {
    let id = store.id(name).unwrap_or_else(|_| panic!("no parameter {name}"));
    store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = value);
}

/// Checks up to `per_param` elements of every parameter whose name starts with
/// one of `prefixes` (trainable only) and returns the worst relative error.
pub fn worst_gradient_error<F>(store: &mut ParamStore<f64>, prefixes: &[&str], per_param: usize, forward: F) -> f64
where
    F: FnMut(&mut ParamStore<f64>) -> (Graph<f64>, Var),
{
    let targets: Vec<_> = store
        .iter()
        .filter(|(_, e)| e.trainable() && prefixes.iter().any(|p| e.name().starts_with(p)))
        .map(|(id, e)| (id, spread_indices(e.value().len(), per_param)))
        .collect();
    assert!(!targets.is_empty(), "no parameters matched {prefixes:?}");
    let checks = check_params(store, &targets, 1e-5, forward);
    let mut worst = 0.0f64;
    for c in &checks {
        let e = c.relative_error(1e-6);
        if e > worst {
            worst = e;
        }
        assert!(e < 1e-3, "{}[{}]: analytic {} numeric {}", c.param, c.index, c.analytic, c.numeric);
    }
    worst
}
