//! Bilinear resampling with half-pixel centres (`align_corners = false`).

use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Source taps for one output coordinate: `(lo, hi, weight_of_hi)`.
pub fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Resamples one `h × w` plane to `oh × ow`.
pub fn resize_plane<T: Float>(src: &[T], h: usize, w: usize, oh: usize, ow: usize, dst: &mut [T]) {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        let fy = T::of(fy);
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let fx = T::of(fx);
            let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
            dst[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
        }
    }
}

fn resize_plane_adjoint<T: Float>(g: &[T], h: usize, w: usize, oh: usize, ow: usize, dst: &mut [T]) {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        let fy = T::of(fy);
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let fx = T::of(fx);
            let d = g[oy * ow + ox];
            dst[y0 * w + x0] += d * (T::one() - fy) * (T::one() - fx);
            dst[y0 * w + x1] += d * (T::one() - fy) * fx;
            dst[y1 * w + x0] += d * fy * (T::one() - fx);
            dst[y1 * w + x1] += d * fy * fx;
        }
    }
}

/// Resizes every plane of an NCHW tensor.
pub fn resize_bilinear<T: Float>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for (dst, src) in out.data_mut().chunks_mut(oh * ow).zip(x.data().chunks(h * w)) {
        resize_plane(src, h, w, oh, ow, dst);
    }
    out
}

impl<T: Float> Graph<T> {
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        if (h, w) == (oh, ow) {
            return x;
        }
        let out = resize_bilinear(self.value(x), oh, ow);
        self.push(out, &[x], move |g, _| {
            let mut gx = Tensor::zeros(&[n, c, h, w]);
            for (dst, src) in gx.data_mut().chunks_mut(h * w).zip(g.data().chunks(oh * ow)) {
                resize_plane_adjoint(src, h, w, oh, ow, dst);
            }
            vec![Some(gx)]
        })
    }
}
