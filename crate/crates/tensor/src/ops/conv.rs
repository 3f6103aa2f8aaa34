//! 2-D convolution via im2col + GEMM, with a direct path for depthwise kernels.

use crate::float::{matmul, Float};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self { stride: 1, padding: 0, dilation: 1, groups: 1 }
    }
}

impl ConvSpec {
    /// Stride-1 convolution that preserves spatial size for an odd `kernel`.
    pub fn same(kernel: usize) -> Self {
        Self { padding: kernel / 2, ..Self::default() }
    }

    pub fn output_size(&self, input: usize, kernel: usize) -> usize {
        let span = self.dilation * (kernel - 1) + 1;
        assert!(input + 2 * self.padding >= span, "kernel larger than padded input");
        (input + 2 * self.padding - span) / self.stride + 1
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }
}

/// Output columns `ox` whose input column `ox·stride + offset − padding` lies in `[0, w)`.
fn valid_range(ow: usize, w: usize, stride: usize, offset: usize, padding: usize) -> (usize, usize) {
    // first ox with ox·stride + offset >= padding
    let lo = if offset >= padding { 0 } else { (padding - offset).div_ceil(stride) };
    // last ox with ox·stride + offset - padding <= w - 1
    let hi = if w + padding > offset { ((w + padding - offset - 1) / stride + 1).min(ow) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds `c` input planes into a `(c·kh·kw) × (oh·ow)` matrix.
fn im2col<T: Float>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let s = g.spec;
    let p = g.oh * g.ow;
    let mut row = 0;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let dst = &mut cols[row * p..(row + 1) * p];
                let x0 = j * s.dilation;
                let (lo, hi) = valid_range(g.ow, g.w, s.stride, x0, s.padding);
                for oy in 0..g.oh {
                    let iy = (oy * s.stride + i * s.dilation) as isize - s.padding as isize;
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    let start = lo * s.stride + x0 - s.padding;
                    if s.stride == 1 {
                        out[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (k, o) in out[lo..hi].iter_mut().enumerate() {
                            *o = src[start + k * s.stride];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input planes.
fn col2im<T: Float>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let s = g.spec;
    let p = g.oh * g.ow;
    let mut row = 0;
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let src = &cols[row * p..(row + 1) * p];
                let x0 = j * s.dilation;
                let (lo, hi) = valid_range(g.ow, g.w, s.stride, x0, s.padding);
                row += 1;
                if lo >= hi {
                    continue;
                }
                let start = lo * s.stride + x0 - s.padding;
                for oy in 0..g.oh {
                    let iy = (oy * s.stride + i * s.dilation) as isize - s.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let sv = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if s.stride == 1 {
                        for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(sv) {
                            *d += v;
                        }
                    } else {
                        for (k, &v) in sv.iter().enumerate() {
                            dst[start + k * s.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_forward<T: Float>(x: &Tensor<T>, w: &Tensor<T>, g: &Geometry, out: &mut Tensor<T>) {
    let (n, c, _, _) = x.dims4();
    let s = g.spec;
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let k = &w.data()[ch * g.kh * g.kw..(ch + 1) * g.kh * g.kw];
            let off = (b * c + ch) * g.oh * g.ow;
            let dst = &mut out.data_mut()[off..off + g.oh * g.ow];
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = T::zero();
                    for i in 0..g.kh {
                        let iy = (oy * s.stride + i * s.dilation) as isize - s.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for j in 0..g.kw {
                            let ix = (ox * s.stride + j * s.dilation) as isize - s.padding as isize;
                            if ix >= 0 && (ix as usize) < g.w {
                                acc += k[i * g.kw + j] * src[iy as usize * g.w + ix as usize];
                            }
                        }
                    }
                    dst[oy * g.ow + ox] = acc;
                }
            }
        }
    }
}

fn depthwise_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Geometry,
    gy: &Tensor<T>,
    gx: Option<&mut Tensor<T>>,
    gw: Option<&mut Tensor<T>>,
) {
    let (n, c, _, _) = x.dims4();
    let s = g.spec;
    let kk = g.kh * g.kw;
    let mut gx = gx;
    let mut gw = gw;
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dy = gy.plane(b, ch);
            let k = &w.data()[ch * kk..(ch + 1) * kk];
            let mut dk = vec![T::zero(); kk];
            let off = (b * c + ch) * g.h * g.w;
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let x0 = j * s.dilation;
                    let (lo, hi) = valid_range(g.ow, g.w, s.stride, x0, s.padding);
                    if lo >= hi {
                        continue;
                    }
                    let start = lo * s.stride + x0 - s.padding;
                    let kv = k[i * g.kw + j];
                    let mut acc = T::zero();
                    for oy in 0..g.oh {
                        let iy = (oy * s.stride + i * s.dilation) as isize - s.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let row = iy as usize * g.w;
                        let d = &dy[oy * g.ow + lo..oy * g.ow + hi];
                        for (t, &dv) in d.iter().enumerate() {
                            acc += dv * src[row + start + t * s.stride];
                        }
                        if let Some(gx) = gx.as_deref_mut() {
                            let dst = &mut gx.data_mut()[off + row..off + row + g.w];
                            for (t, &dv) in d.iter().enumerate() {
                                dst[start + t * s.stride] += dv * kv;
                            }
                        }
                    }
                    dk[i * g.kw + j] = acc;
                }
            }
            if let Some(gw) = gw.as_deref_mut() {
                for (dst, v) in gw.data_mut()[ch * kk..(ch + 1) * kk].iter_mut().zip(dk) {
                    *dst += v;
                }
            }
        }
    }
}

impl<T: Float> Graph<T> {
    /// `y = conv(x, w) + b` with `x: [N, C, H, W]`, `w: [O, C/groups, kh, kw]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: ConvSpec) -> Var {
        let (xv, wv) = (self.value_rc(x), self.value_rc(w));
        let (n, c, h, wd) = xv.dims4();
        let (o, cg, kh, kw) = wv.dims4();
        let groups = spec.groups;
        assert!(groups >= 1 && c % groups == 0 && o % groups == 0, "conv2d: bad groups");
        assert_eq!(cg, c / groups, "conv2d: weight expects {} input channels per group, input has {}", cg, c / groups);
        let geo = Geometry {
            c: cg,
            h,
            w: wd,
            kh,
            kw,
            oh: spec.output_size(h, kh),
            ow: spec.output_size(wd, kw),
            spec,
        };
        let og = o / groups;
        let (oh, ow) = (geo.oh, geo.ow);
        let p = oh * ow;
        let krows = cg * kh * kw;
        let depthwise = groups == c && cg == 1 && og == 1;

        let mut out = Tensor::zeros(&[n, o, oh, ow]);
        if depthwise {
            depthwise_forward(&xv, &wv, &geo, &mut out);
        } else {
            let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); krows * p] };
            for b in 0..n {
                for gi in 0..groups {
                    let xin = &xv.sample(b)[gi * cg * h * wd..(gi + 1) * cg * h * wd];
                    let colref: &[T] = if geo.is_pointwise() {
                        xin
                    } else {
                        im2col(xin, &geo, &mut cols);
                        &cols
                    };
                    let wg = &wv.data()[gi * og * krows..(gi + 1) * og * krows];
                    let off = (b * o + gi * og) * p;
                    matmul(og, krows, p, wg, false, colref, false, &mut out.data_mut()[off..off + og * p], T::one(), T::zero());
                }
            }
        }
        if let Some(bv) = bias {
            let bvals = self.value(bv).data().to_vec();
            assert_eq!(bvals.len(), o, "conv2d: bias length");
            for (i, plane) in out.data_mut().chunks_mut(p).enumerate() {
                let bb = bvals[i % o];
                plane.iter_mut().for_each(|v| *v += bb);
            }
        }

        let mut parents = vec![x, w];
        parents.extend(bias);
        self.push(out, &parents, move |gy, needs| {
            let mut gx = needs[0].then(|| Tensor::zeros(xv.shape()));
            let mut gw = needs[1].then(|| Tensor::zeros(wv.shape()));
            if depthwise {
                depthwise_backward(&xv, &wv, &geo, gy, gx.as_mut(), gw.as_mut());
            } else {
                let pointwise = geo.is_pointwise();
                let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); krows * p] };
                let mut dcols = vec![T::zero(); krows * p];
                for b in 0..n {
                    for gi in 0..groups {
                        let xoff = (b * c + gi * cg) * h * wd;
                        let xin = &xv.data()[xoff..xoff + cg * h * wd];
                        let dy = &gy.data()[(b * o + gi * og) * p..(b * o + (gi + 1) * og) * p];
                        let wg = &wv.data()[gi * og * krows..(gi + 1) * og * krows];
                        if let Some(gw) = gw.as_mut() {
                            let colref: &[T] = if pointwise {
                                xin
                            } else {
                                im2col(xin, &geo, &mut cols);
                                &cols
                            };
                            let dst = &mut gw.data_mut()[gi * og * krows..(gi + 1) * og * krows];
                            matmul(og, p, krows, dy, false, colref, true, dst, T::one(), T::one());
                        }
                        if let Some(gx) = gx.as_mut() {
                            let dst = &mut gx.data_mut()[xoff..xoff + cg * h * wd];
                            if pointwise {
                                matmul(krows, og, p, wg, true, dy, false, dst, T::one(), T::one());
                            } else {
                                matmul(krows, og, p, wg, true, dy, false, &mut dcols, T::one(), T::zero());
                                col2im(&dcols, &geo, dst);
                            }
                        }
                    }
                }
            }
            let mut res = vec![gx, gw];
            if needs.len() > 2 {
                res.push(needs[2].then(|| {
                    let mut gb = vec![T::zero(); o];
                    for (i, plane) in gy.data().chunks(p).enumerate() {
                        gb[i % o] += plane.iter().copied().sum::<T>();
                    }
                    Tensor::new(&[o], gb).expect("shape")
                }));
            }
            res
        })
    }
}
