//! Central finite-difference verification of parameter gradients.

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    /// `|a − n| / max(|a|, |n|, floor)`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(floor)
    }
}

/// Compares backprop against `(L(θ+h) − L(θ−h)) / 2h` for the given parameter
/// elements. `forward` must build a fresh graph ending in a scalar.
pub fn check_params<F>(
    store: &mut ParamStore<f64>,
    targets: &[(ParamId, Vec<usize>)],
    step: f64,
    mut forward: F,
) -> Vec<GradCheck>
where
    F: FnMut(&mut ParamStore<f64>) -> (Graph<f64>, Var),
{
    let (graph, loss) = forward(store);
    let grads = graph.backward(loss);
    let analytic: Vec<Vec<f64>> = targets
        .iter()
        .map(|(id, idx)| {
            let g = grads.param(*id);
            idx.iter().map(|&i| g.map_or(0.0, |g| g.data()[i])).collect()
        })
        .collect();
    drop(graph);

    let mut out = Vec::new();
    for ((id, idx), an) in targets.iter().zip(analytic) {
        for (&i, a) in idx.iter().zip(an) {
            let orig = store.value(*id).data()[i];
            store.value_mut(*id).data_mut()[i] = orig + step;
            let plus = eval(&mut forward, store);
            store.value_mut(*id).data_mut()[i] = orig - step;
            let minus = eval(&mut forward, store);
            store.value_mut(*id).data_mut()[i] = orig;
            out.push(GradCheck {
                param: store.entry(*id).name().to_string(),
                index: i,
                analytic: a,
                numeric: (plus - minus) / (2.0 * step),
            });
        }
    }
    out
}

fn eval<F>(forward: &mut F, store: &mut ParamStore<f64>) -> f64
where
    F: FnMut(&mut ParamStore<f64>) -> (Graph<f64>, Var),
{
    let (g, v) = forward(store);
    g.value(v).data()[0]
}

/// Up to `count` evenly spread element indices of a tensor with `len` elements.
pub fn spread_indices(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    (0..count).map(|k| k * len / count + (k * 7919) % (len / count).max(1)).collect()
}
