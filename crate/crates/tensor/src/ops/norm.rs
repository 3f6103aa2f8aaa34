//! Batch normalisation over the `N·H·W` extent of each channel.

use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Per-channel statistics of the batch seen by a training-mode forward.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance, as used for normalisation.
    pub var: Vec<T>,
    pub count: usize,
}

impl<T: Float> Graph<T> {
    /// Training-mode batch norm using the statistics of `x` itself.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> (Var, BatchStats<T>) {
        let xv = self.value_rc(x);
        let (n, c, h, w) = xv.dims4();
        let hw = h * w;
        let m = n * hw;
        let mf = T::of(m as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                mean[ch] += xv.plane(b, ch).iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= mf);
        for b in 0..n {
            for ch in 0..c {
                let mu = mean[ch];
                var[ch] += xv.plane(b, ch).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v /= mf);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let mut xhat = Tensor::zeros(xv.shape());
        let mut out = Tensor::zeros(xv.shape());
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in 0..hw {
                    let z = (xv.data()[off + i] - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[off + i] = z;
                    out.data_mut()[off + i] = z * gv[ch] + bv[ch];
                }
            }
        }
        let stats = BatchStats { mean, var, count: m };
        let var_out = self.push(out, &[x, gamma, beta], move |gy, needs| {
            let mut sum_dy = vec![T::zero(); c];
            let mut sum_dy_xhat = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    for i in 0..hw {
                        let d = gy.data()[off + i];
                        sum_dy[ch] += d;
                        sum_dy_xhat[ch] += d * xhat.data()[off + i];
                    }
                }
            }
            let gx = needs[0].then(|| {
                let mut gx = Tensor::zeros(&[n, c, h, w]);
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        let k = gv[ch] * inv_std[ch] / mf;
                        for i in 0..hw {
                            let d = gy.data()[off + i] * mf - sum_dy[ch] - xhat.data()[off + i] * sum_dy_xhat[ch];
                            gx.data_mut()[off + i] = k * d;
                        }
                    }
                }
                gx
            });
            vec![
                gx,
                needs[1].then(|| Tensor::new(&[c], sum_dy_xhat.clone()).expect("shape")),
                needs[2].then(|| Tensor::new(&[c], sum_dy.clone()).expect("shape")),
            ]
        });
        (var_out, stats)
    }

    /// Inference-mode batch norm with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Var {
        let xv = self.value_rc(x);
        let (n, c, h, w) = xv.dims4();
        let hw = h * w;
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mean = mean.to_vec();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let mut out = Tensor::zeros(xv.shape());
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                let k = gv[ch] * inv_std[ch];
                for i in 0..hw {
                    out.data_mut()[off + i] = (xv.data()[off + i] - mean[ch]) * k + bv[ch];
                }
            }
        }
        self.push(out, &[x, gamma, beta], move |gy, needs| {
            let mut gx = needs[0].then(|| Tensor::zeros(&[n, c, h, w]));
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    for i in 0..hw {
                        let d = gy.data()[off + i];
                        gb[ch] += d;
                        gg[ch] += d * (xv.data()[off + i] - mean[ch]) * inv_std[ch];
                        if let Some(gx) = gx.as_mut() {
                            gx.data_mut()[off + i] = d * gv[ch] * inv_std[ch];
                        }
                    }
                }
            }
            vec![
                gx,
                needs[1].then(|| Tensor::new(&[c], gg).expect("shape")),
                needs[2].then(|| Tensor::new(&[c], gb).expect("shape")),
            ]
        })
    }
}
