use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

impl<T: Float> Graph<T> {
    /// Max pooling; padded positions never win.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let oh = (h + 2 * padding - kernel) / stride + 1;
        let ow = (w + 2 * padding - kernel) / stride + 1;
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0usize; n * c * oh * ow];
        for plane_idx in 0..n * c {
            let src = &xv.data()[plane_idx * h * w..(plane_idx + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0;
                    for i in 0..kernel {
                        let iy = (oy * stride + i) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for j in 0..kernel {
                            let ix = (ox * stride + j) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if src[idx] > best {
                                best = src[idx];
                                best_i = idx;
                            }
                        }
                    }
                    let o = (plane_idx * oh + oy) * ow + ox;
                    out.data_mut()[o] = best;
                    argmax[o] = plane_idx * h * w + best_i;
                }
            }
        }
        let in_shape = [n, c, h, w];
        self.push(out, &[x], move |g, _| {
            let mut gx = Tensor::zeros(&in_shape);
            for (&src, &d) in argmax.iter().zip(g.data()) {
                gx.data_mut()[src] += d;
            }
            vec![Some(gx)]
        })
    }
}
