//! 2-D convolution via im2col and GEMM.

use std::rc::Rc;

use crate::scalar::{gemm, MatRef, Scalar};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Square-kernel convolution geometry. Padding is zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

pub fn conv2d_output_size(input: usize, kernel: usize, spec: Conv2dSpec) -> usize {
    (input + 2 * spec.padding - kernel) / spec.stride + 1
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output columns `[lo, hi)` whose input column `ox * stride + kj - pad`
/// lies inside `[0, w)`.
fn valid_cols(g: &Geometry, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride).min(g.wo);
    let limit = g.w + g.pad;
    let hi = if limit <= kj { 0 } else { ((limit - kj - 1) / g.stride + 1).min(g.wo) };
    (lo, hi.max(lo))
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if lo < hi {
                        let ix0 = lo * g.stride + kj - g.pad;
                        if g.stride == 1 {
                            line[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                        } else {
                            for (d, s) in line[lo..hi].iter_mut().zip(src[ix0..].iter().step_by(g.stride)) {
                                *d = *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, kj);
                if lo >= hi {
                    continue;
                }
                let ix0 = lo * g.stride + kj - g.pad;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.wo + lo..oy * g.wo + hi];
                    for (d, s) in dst[ix0..].iter_mut().step_by(g.stride).zip(line) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// `x: [N, C, H, W]`, `weight: [Co, C, k, k]`, `bias: [Co]`.
    pub fn conv2d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>, spec: Conv2dSpec) -> Var<'t, T> {
        let xv = self.value();
        let wv = weight.value();
        let (n, c, h, w) = xv.dims4();
        let (co, ci, k, k2) = wv.dims4();
        assert_eq!(ci, c, "conv2d: weight expects {ci} input channels, input has {c}");
        assert_eq!(k, k2, "conv2d: square kernels only");
        assert!(h + 2 * spec.padding >= k && w + 2 * spec.padding >= k, "conv2d: kernel larger than input");
        let g = Geometry {
            c,
            h,
            w,
            k,
            ho: conv2d_output_size(h, k, spec),
            wo: conv2d_output_size(w, k, spec),
            stride: spec.stride,
            pad: spec.padding,
        };
        let bv = bias.map(|b| {
            let b = b.value();
            assert_eq!(b.shape(), &[co], "conv2d: bias shape");
            b
        });
        let (kk, p) = (g.rows(), g.cols());
        let keep_cols = weight.requires_grad() && !g.is_pointwise();
        let mut out = vec![T::zero(); n * co * p];
        let mut saved_cols = Vec::new();
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * p] };
        let x_per = c * h * w;
        for b in 0..n {
            let x_b = &xv.data()[b * x_per..(b + 1) * x_per];
            let colm = if g.is_pointwise() {
                MatRef::row_major(x_b, kk, p)
            } else {
                im2col(x_b, &g, &mut cols);
                MatRef::row_major(&cols, kk, p)
            };
            let out_b = &mut out[b * co * p..(b + 1) * co * p];
            if let Some(bv) = &bv {
                for (o, row) in out_b.chunks_mut(p).enumerate() {
                    row.fill(bv.data()[o]);
                }
            }
            gemm(MatRef::row_major(wv.data(), co, kk), colm, T::one(), out_b);
            if keep_cols {
                saved_cols.extend_from_slice(&cols);
            }
        }
        let value = Tensor::from_parts(vec![n, co, g.ho, g.wo], out);

        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let (xid, wid, bid) = (self.id(), weight.id(), bias.map(|b| b.id()));
        let xv_saved: Option<Rc<Tensor<T>>> =
            if weight.requires_grad() && g.is_pointwise() { Some(xv.clone()) } else { None };
        let wv_saved = wv.clone();
        self.tape().op(value, &parents, move |gout, sink| {
            if let Some(bid) = bid {
                if let Some(gb) = sink.slot(bid) {
                    for b in 0..n {
                        for (o, row) in gout[b * co * p..(b + 1) * co * p].chunks(p).enumerate() {
                            gb[o] += row.iter().copied().sum();
                        }
                    }
                }
            }
            if let Some(gw) = sink.slot(wid) {
                for b in 0..n {
                    let gout_b = MatRef::row_major(&gout[b * co * p..(b + 1) * co * p], co, p);
                    let colm = match &xv_saved {
                        Some(x) => MatRef::row_major(&x.data()[b * x_per..(b + 1) * x_per], kk, p),
                        None => MatRef::row_major(&saved_cols[b * kk * p..(b + 1) * kk * p], kk, p),
                    };
                    gemm(gout_b, colm.t(), T::one(), gw);
                }
            }
            if sink.wants(xid) {
                let wmat = MatRef::row_major(wv_saved.data(), co, kk).t();
                let mut dcols = vec![T::zero(); kk * p];
                let gx = sink.slot(xid).expect("wanted");
                for b in 0..n {
                    let gout_b = MatRef::row_major(&gout[b * co * p..(b + 1) * co * p], co, p);
                    let gx_b = &mut gx[b * x_per..(b + 1) * x_per];
                    if g.is_pointwise() {
                        gemm(wmat, gout_b, T::one(), gx_b);
                    } else {
                        gemm(wmat, gout_b, T::zero(), &mut dcols);
                        col2im(&dcols, &g, gx_b);
                    }
                }
            }
        })
    }
}
