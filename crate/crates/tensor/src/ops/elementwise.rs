//! Pointwise, broadcasting and reduction ops.

use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

impl<T: Float> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, &[a, b], |g, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, &[a, b], |g, _| vec![Some(g.clone()), Some(g.map(|x| -x))])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value_rc(a), self.value_rc(b));
        let out = av.zip_map(&bv, |x, y| x * y);
        self.push(out, &[a, b], move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&bv, |d, y| d * y)),
                needs[1].then(|| g.zip_map(&av, |d, x| d * x)),
            ]
        })
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, &[a], move |g, _| vec![Some(g.map(|d| d * factor))])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let mask = self.value_rc(a);
        self.push(out, &[a], move |g, _| {
            vec![Some(g.zip_map(&mask, |d, x| if x > T::zero() { d } else { T::zero() }))]
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let saved = out.clone();
        self.push(out, &[a], move |g, _| {
            vec![Some(g.zip_map(&saved, |d, s| d * s * (T::one() - s)))]
        })
    }

    /// `x[n, c, :, :] * s[n, c]` for `s` shaped `[N, C, 1, 1]`.
    pub fn mul_channels(&mut self, x: Var, s: Var) -> Var {
        let (xv, sv) = (self.value_rc(x), self.value_rc(s));
        let (n, c, h, w) = xv.dims4();
        assert_eq!(sv.shape(), &[n, c, 1, 1], "mul_channels scale shape");
        let hw = h * w;
        let mut out = Tensor::zeros(xv.shape());
        for (i, (o, xi)) in out.data_mut().chunks_mut(hw).zip(xv.data().chunks(hw)).enumerate() {
            let k = sv.data()[i];
            for (a, &b) in o.iter_mut().zip(xi) {
                *a = b * k;
            }
        }
        self.push(out, &[x, s], move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = Tensor::zeros(xv.shape());
                for (i, (o, gi)) in gx.data_mut().chunks_mut(hw).zip(g.data().chunks(hw)).enumerate() {
                    let k = sv.data()[i];
                    for (a, &b) in o.iter_mut().zip(gi) {
                        *a = b * k;
                    }
                }
                gx
            });
            let gs = needs[1].then(|| {
                let data = g
                    .data()
                    .chunks(hw)
                    .zip(xv.data().chunks(hw))
                    .map(|(gi, xi)| gi.iter().zip(xi).map(|(&a, &b)| a * b).sum())
                    .collect();
                Tensor::new(&[n, c, 1, 1], data).expect("shape")
            });
            vec![gx, gs]
        })
    }

    /// `x[n, c, h, w] * m[n, 0, h, w]`: one spatial map broadcast over channels.
    pub fn mul_spatial(&mut self, x: Var, m: Var) -> Var {
        let (xv, mv) = (self.value_rc(x), self.value_rc(m));
        let (n, c, h, w) = xv.dims4();
        assert_eq!(mv.shape(), &[n, 1, h, w], "mul_spatial map shape");
        let hw = h * w;
        let mut out = Tensor::zeros(xv.shape());
        for b in 0..n {
            let mp = mv.plane(b, 0);
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for ((o, &xi), &mi) in out.data_mut()[off..off + hw].iter_mut().zip(xv.plane(b, ch)).zip(mp) {
                    *o = xi * mi;
                }
            }
        }
        self.push(out, &[x, m], move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = Tensor::zeros(xv.shape());
                for b in 0..n {
                    let mp = mv.plane(b, 0);
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        for ((o, &gi), &mi) in gx.data_mut()[off..off + hw].iter_mut().zip(g.plane(b, ch)).zip(mp) {
                            *o = gi * mi;
                        }
                    }
                }
                gx
            });
            let gm = needs[1].then(|| {
                let mut gm = Tensor::zeros(mv.shape());
                for b in 0..n {
                    let dst = &mut gm.data_mut()[b * hw..(b + 1) * hw];
                    for ch in 0..c {
                        for ((o, &gi), &xi) in dst.iter_mut().zip(g.plane(b, ch)).zip(xv.plane(b, ch)) {
                            *o += gi * xi;
                        }
                    }
                }
                gm
            });
            vec![gx, gm]
        })
    }

    /// Pixel-wise two-way softmax over a pair of `[N, 1, H, W]` logit maps.
    ///
    /// Returns `[N, 2, H, W]`: channel 0 is `e^a / (e^a + e^b)`, channel 1 is
    /// `e^b / (e^a + e^b)`.
    pub fn softmax_pair(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value_rc(a), self.value_rc(b));
        let (n, c, h, w) = av.dims4();
        assert_eq!(c, 1, "softmax_pair expects single-channel maps");
        assert_eq!(av.shape(), bv.shape(), "softmax_pair shape mismatch");
        let hw = h * w;
        let mut out = Tensor::zeros(&[n, 2, h, w]);
        for s in 0..n {
            for i in 0..hw {
                let (x, y) = (av.data()[s * hw + i], bv.data()[s * hw + i]);
                let m = x.max(y);
                let (ex, ey) = ((x - m).exp(), (y - m).exp());
                let z = ex + ey;
                out.data_mut()[s * 2 * hw + i] = ex / z;
                out.data_mut()[s * 2 * hw + hw + i] = ey / z;
            }
        }
        let saved = out.clone();
        self.push(out, &[a, b], move |g, _| {
            let mut ga = Tensor::zeros(&[n, 1, h, w]);
            for s in 0..n {
                for i in 0..hw {
                    let p = saved.data()[s * 2 * hw + i];
                    let q = saved.data()[s * 2 * hw + hw + i];
                    let d = g.data()[s * 2 * hw + i] - g.data()[s * 2 * hw + hw + i];
                    ga.data_mut()[s * hw + i] = p * q * d;
                }
            }
            let gb = ga.map(|x| -x);
            vec![Some(ga), Some(gb)]
        })
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let shapes: Vec<(usize, usize, usize, usize)> = parts.iter().map(|&p| self.value(p).dims4()).collect();
        let (n, _, h, w) = shapes[0];
        for s in &shapes {
            assert!(s.0 == n && s.2 == h && s.3 == w, "concat_channels: {shapes:?}");
        }
        let total: usize = shapes.iter().map(|s| s.1).sum();
        let hw = h * w;
        let mut out = Tensor::zeros(&[n, total, h, w]);
        for b in 0..n {
            let mut off = 0;
            for (&p, s) in parts.iter().zip(&shapes) {
                let src = self.value(p).sample(b);
                let dst = (b * total + off) * hw;
                out.data_mut()[dst..dst + s.1 * hw].copy_from_slice(src);
                off += s.1;
            }
        }
        let chans: Vec<usize> = shapes.iter().map(|s| s.1).collect();
        self.push(out, parts, move |g, needs| {
            let mut res = Vec::with_capacity(chans.len());
            let mut off = 0;
            for (i, &c) in chans.iter().enumerate() {
                if needs[i] {
                    let mut t = Tensor::zeros(&[n, c, h, w]);
                    for b in 0..n {
                        let src = (b * total + off) * hw;
                        t.data_mut()[b * c * hw..(b + 1) * c * hw].copy_from_slice(&g.data()[src..src + c * hw]);
                    }
                    res.push(Some(t));
                } else {
                    res.push(None);
                }
                off += c;
            }
            res
        })
    }

    /// Channels `[start, start + len)`.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert!(start + len <= c, "narrow_channels out of range");
        let hw = h * w;
        let mut out = Tensor::zeros(&[n, len, h, w]);
        for b in 0..n {
            let src = (b * c + start) * hw;
            out.data_mut()[b * len * hw..(b + 1) * len * hw]
                .copy_from_slice(&self.value(x).data()[src..src + len * hw]);
        }
        self.push(out, &[x], move |g, _| {
            let mut gx = Tensor::zeros(&[n, c, h, w]);
            for b in 0..n {
                let dst = (b * c + start) * hw;
                gx.data_mut()[dst..dst + len * hw].copy_from_slice(&g.data()[b * len * hw..(b + 1) * len * hw]);
            }
            vec![Some(gx)]
        })
    }

    /// Mean over each `[H, W]` plane, giving `[N, C, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let inv = T::one() / T::of(hw as f64);
        let data = self.value(x).data().chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::new(&[n, c, 1, 1], data).expect("shape");
        self.push(out, &[x], move |g, _| {
            let mut gx = Tensor::zeros(&[n, c, h, w]);
            for (dst, &gi) in gx.data_mut().chunks_mut(hw).zip(g.data()) {
                dst.fill(gi * inv);
            }
            vec![Some(gx)]
        })
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, &[x], move |g, _| vec![Some(Tensor::full(&shape, g.data()[0]))])
    }

    /// `Σ x ⊙ weights` for a constant weight tensor.
    pub fn dot_const(&mut self, x: Var, weights: Tensor<T>) -> Var {
        assert_eq!(self.value(x).shape(), weights.shape(), "dot_const shape");
        let v: T = self.value(x).data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        self.push(Tensor::scalar(v), &[x], move |g, _| {
            let s = g.data()[0];
            vec![Some(weights.map(|w| w * s))]
        })
    }

    /// `Σ coeffs[i] * terms[i]` over one-element tensors.
    pub fn weighted_sum(&mut self, terms: &[Var], coeffs: &[T]) -> Var {
        assert_eq!(terms.len(), coeffs.len());
        let v = terms.iter().zip(coeffs).map(|(&t, &c)| self.value(t).data()[0] * c).sum();
        let coeffs = coeffs.to_vec();
        self.push(Tensor::scalar(v), terms, move |g, _| {
            coeffs.iter().map(|&c| Some(Tensor::scalar(g.data()[0] * c))).collect()
        })
    }

    /// A scalar node whose value and input gradient were computed outside the
    /// engine, e.g. by a closed-form loss. `grad` is `d value / d x`.
    pub fn external_scalar(&mut self, x: Var, value: T, grad: Tensor<T>) -> Var {
        assert_eq!(self.value(x).shape(), grad.shape(), "external_scalar gradient shape");
        self.push(Tensor::scalar(value), &[x], move |g, _| {
            let s = g.data()[0];
            vec![Some(grad.map(|d| d * s))]
        })
    }
}

pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
