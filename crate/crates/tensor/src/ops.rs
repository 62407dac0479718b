use std::ops::{Add, Mul, Neg, Sub};

use crate::scalar::{gemm, MatRef, Scalar};
use crate::tape::Var;
use crate::tensor::Tensor;

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    pub fn map(self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<'t, T> {
        let xv = self.value();
        let out = xv.map(f);
        let id = self.id();
        let yv = std::rc::Rc::new(out.clone());
        self.tape().op(out, &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                for (((gx, &g), &x), &y) in gx.iter_mut().zip(g).zip(xv.data()).zip(yv.data()) {
                    *gx += g * df(x, y);
                }
            }
        })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t, T> {
        let s = T::lit(slope);
        self.map(move |x| if x > T::zero() { x } else { x * s }, move |x, _| if x > T::zero() { T::one() } else { s })
    }

    pub fn relu(self) -> Var<'t, T> {
        self.leaky_relu(0.0)
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.map(|x| T::one() / (T::one() + (-x).exp()), |_, y| y * (T::one() - y))
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.map(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn abs(self) -> Var<'t, T> {
        self.map(|x| x.abs(), |x, _| x.signum())
    }

    pub fn square(self) -> Var<'t, T> {
        self.map(|x| x * x, |x, _| x + x)
    }

    pub fn scale(self, c: f64) -> Var<'t, T> {
        let c = T::lit(c);
        self.map(move |x| x * c, move |_, _| c)
    }

    pub fn shift(self, c: f64) -> Var<'t, T> {
        let c = T::lit(c);
        self.map(move |x| x + c, |_, _| T::one())
    }

    /// `1 - x`.
    pub fn one_minus(self) -> Var<'t, T> {
        self.map(|x| T::one() - x, |_, _| -T::one())
    }

    /// Copy that blocks gradient flow.
    pub fn detach(self) -> Var<'t, T> {
        self.tape().constant((*self.value()).clone())
    }

    fn zip_with(
        self,
        other: Var<'t, T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        da: impl Fn(T, T) -> T + 'static,
        db: impl Fn(T, T) -> T + 'static,
    ) -> Var<'t, T> {
        let (av, bv) = (self.value(), other.value());
        same_shape(op, &av, &bv);
        let data = av.data().iter().zip(bv.data()).map(|(&a, &b)| f(a, b)).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        let (aid, bid) = (self.id(), other.id());
        self.tape().op(out, &[self, other], move |g, sink| {
            if let Some(ga) = sink.slot(aid) {
                for (i, gi) in ga.iter_mut().enumerate() {
                    *gi += g[i] * da(av.data()[i], bv.data()[i]);
                }
            }
            if let Some(gb) = sink.slot(bid) {
                for (i, gi) in gb.iter_mut().enumerate() {
                    *gi += g[i] * db(av.data()[i], bv.data()[i]);
                }
            }
        })
    }

    pub fn add_var(self, other: Var<'t, T>) -> Var<'t, T> {
        self.zip_with(other, "add", |a, b| a + b, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub_var(self, other: Var<'t, T>) -> Var<'t, T> {
        self.zip_with(other, "sub", |a, b| a - b, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul_var(self, other: Var<'t, T>) -> Var<'t, T> {
        self.zip_with(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    /// `x: [N, C, H, W]` times a single-channel gate `g: [N, 1, H, W]`.
    pub fn mul_gate(self, gate: Var<'t, T>) -> Var<'t, T> {
        let (xv, gv) = (self.value(), gate.value());
        let (n, c, h, w) = xv.dims4();
        assert_eq!(gv.shape(), &[n, 1, h, w], "mul_gate: gate shape");
        let hw = h * w;
        let mut out = vec![T::zero(); xv.numel()];
        for b in 0..n {
            let gp = &gv.data()[b * hw..(b + 1) * hw];
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in 0..hw {
                    out[off + i] = xv.data()[off + i] * gp[i];
                }
            }
        }
        let (xid, gid) = (self.id(), gate.id());
        self.tape().op(Tensor::from_parts(xv.shape().to_vec(), out), &[self, gate], move |g, sink| {
            if let Some(gx) = sink.slot(xid) {
                for b in 0..n {
                    let gp = &gv.data()[b * hw..(b + 1) * hw];
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        for i in 0..hw {
                            gx[off + i] += g[off + i] * gp[i];
                        }
                    }
                }
            }
            if let Some(gg) = sink.slot(gid) {
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        for i in 0..hw {
                            gg[b * hw + i] += g[off + i] * xv.data()[off + i];
                        }
                    }
                }
            }
        })
    }

    /// Feature-wise affine modulation `x * (1 + gamma) + beta` with
    /// `gamma, beta: [N, C]` broadcast over the spatial axes.
    pub fn modulate(self, gamma: Var<'t, T>, beta: Var<'t, T>) -> Var<'t, T> {
        let (xv, gv, bv) = (self.value(), gamma.value(), beta.value());
        let (n, c, h, w) = xv.dims4();
        assert_eq!(gv.shape(), &[n, c], "modulate: gamma shape");
        assert_eq!(bv.shape(), &[n, c], "modulate: beta shape");
        let hw = h * w;
        let mut out = vec![T::zero(); xv.numel()];
        for nc in 0..n * c {
            let (s, t) = (T::one() + gv.data()[nc], bv.data()[nc]);
            for i in 0..hw {
                out[nc * hw + i] = xv.data()[nc * hw + i] * s + t;
            }
        }
        let (xid, gid, bid) = (self.id(), gamma.id(), beta.id());
        self.tape().op(Tensor::from_parts(xv.shape().to_vec(), out), &[self, gamma, beta], move |g, sink| {
            if let Some(gx) = sink.slot(xid) {
                for nc in 0..n * c {
                    let s = T::one() + gv.data()[nc];
                    for i in 0..hw {
                        gx[nc * hw + i] += g[nc * hw + i] * s;
                    }
                }
            }
            if let Some(gg) = sink.slot(gid) {
                for (nc, gg) in gg.iter_mut().enumerate() {
                    for i in 0..hw {
                        *gg += g[nc * hw + i] * xv.data()[nc * hw + i];
                    }
                }
            }
            if let Some(gb) = sink.slot(bid) {
                for (nc, gb) in gb.iter_mut().enumerate() {
                    *gb += g[nc * hw..(nc + 1) * hw].iter().copied().sum();
                }
            }
        })
    }

    /// `x: [N, D]`, `weight: [O, D]`, `bias: [O]` -> `[N, O]`.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Var<'t, T> {
        let (xv, wv) = (self.value(), weight.value());
        let (n, d) = match xv.shape() {
            [n, d] => (*n, *d),
            s => panic!("linear: expected [N, D] input, got {s:?}"),
        };
        let o = wv.shape()[0];
        assert_eq!(wv.shape(), &[o, d], "linear: weight shape");
        let mut out = vec![T::zero(); n * o];
        if let Some(b) = bias {
            let bv = b.value();
            assert_eq!(bv.shape(), &[o], "linear: bias shape");
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(MatRef::row_major(xv.data(), n, d), MatRef::row_major(wv.data(), o, d).t(), T::one(), &mut out);
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let (xid, wid, bid) = (self.id(), weight.id(), bias.map(|b| b.id()));
        self.tape().op(Tensor::from_parts(vec![n, o], out), &parents, move |g, sink| {
            let gm = MatRef::row_major(g, n, o);
            if let Some(gx) = sink.slot(xid) {
                gemm(gm, MatRef::row_major(wv.data(), o, d), T::one(), gx);
            }
            if let Some(gw) = sink.slot(wid) {
                gemm(gm.t(), MatRef::row_major(xv.data(), n, d), T::one(), gw);
            }
            if let Some(gb) = bid.and_then(|bid| sink.slot(bid)) {
                for row in g.chunks(o) {
                    for (gb, &v) in gb.iter_mut().zip(row) {
                        *gb += v;
                    }
                }
            }
        })
    }

    pub fn sum(self) -> Var<'t, T> {
        let xv = self.value();
        let id = self.id();
        self.tape().op(Tensor::scalar(xv.sum()), &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                for v in gx.iter_mut() {
                    *v += g[0];
                }
            }
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.value().numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t, T> {
        let xv = self.value();
        let out = (*xv).clone().reshape(shape).expect("reshape: element count");
        let id = self.id();
        self.tape().op(out, &[self], move |g, sink| sink.accumulate(id, g))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'t, T> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        assert!(axis < shape.len() && start + len <= shape[axis], "narrow: range out of bounds");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        let id = self.id();
        self.tape().op(Tensor::from_parts(oshape, out), &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    for (d, s) in gx[base..base + len * inner].iter_mut().zip(&g[o * len * inner..]) {
                        *d += *s;
                    }
                }
            }
        })
    }

    /// Concatenation along `axis`.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Var<'t, T> {
        assert!(!parts.is_empty(), "concat: no inputs");
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let shape0 = values[0].shape().to_vec();
        for v in &values {
            assert_eq!(v.ndim(), shape0.len(), "concat: rank mismatch");
            for (ax, (&a, &b)) in v.shape().iter().zip(&shape0).enumerate() {
                assert!(ax == axis || a == b, "concat: shape mismatch {:?} vs {:?}", v.shape(), shape0);
            }
        }
        let outer: usize = shape0[..axis].iter().product();
        let inner: usize = shape0[axis + 1..].iter().product();
        let dims: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = dims.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &d) in values.iter().zip(&dims) {
                out.extend_from_slice(&v.data()[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut oshape = shape0;
        oshape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id()).collect();
        parts[0].tape().op(Tensor::from_parts(oshape, out), parts, move |g, sink| {
            let mut offset = 0;
            for (&id, &d) in ids.iter().zip(&dims) {
                if let Some(gx) = sink.slot(id) {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + d) * inner];
                        for (a, b) in gx[o * d * inner..(o + 1) * d * inner].iter_mut().zip(src) {
                            *a += *b;
                        }
                    }
                }
                offset += d;
            }
        })
    }

    /// Nearest-neighbour upsampling of `[N, C, H, W]` by an integer factor.
    pub fn upsample_nearest(self, factor: usize) -> Var<'t, T> {
        let xv = self.value();
        let (n, c, h, w) = xv.dims4();
        let (ho, wo) = (h * factor, w * factor);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for nc in 0..n * c {
            for y in 0..ho {
                for x in 0..wo {
                    out[(nc * ho + y) * wo + x] = xv.data()[(nc * h + y / factor) * w + x / factor];
                }
            }
        }
        let id = self.id();
        self.tape().op(Tensor::from_parts(vec![n, c, ho, wo], out), &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                for nc in 0..n * c {
                    for y in 0..ho {
                        for x in 0..wo {
                            gx[(nc * h + y / factor) * w + x / factor] += g[(nc * ho + y) * wo + x];
                        }
                    }
                }
            }
        })
    }

    /// Mean over non-overlapping `factor x factor` blocks.
    pub fn avg_pool(self, factor: usize) -> Var<'t, T> {
        let xv = self.value();
        let (n, c, h, w) = xv.dims4();
        assert!(h % factor == 0 && w % factor == 0, "avg_pool: {h}x{w} not divisible by {factor}");
        let (ho, wo) = (h / factor, w / factor);
        let norm = T::lit(1.0 / (factor * factor) as f64);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for nc in 0..n * c {
            for y in 0..h {
                for x in 0..w {
                    out[(nc * ho + y / factor) * wo + x / factor] += xv.data()[(nc * h + y) * w + x] * norm;
                }
            }
        }
        let id = self.id();
        self.tape().op(Tensor::from_parts(vec![n, c, ho, wo], out), &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                for nc in 0..n * c {
                    for y in 0..h {
                        for x in 0..w {
                            gx[(nc * h + y) * w + x] += g[(nc * ho + y / factor) * wo + x / factor] * norm;
                        }
                    }
                }
            }
        })
    }

    /// Spatial mean: `[N, C, H, W]` -> `[N, C]`.
    pub fn global_avg_pool(self) -> Var<'t, T> {
        let xv = self.value();
        let (n, c, h, w) = xv.dims4();
        let hw = h * w;
        let norm = T::lit(1.0 / hw as f64);
        let out: Vec<T> = xv.data().chunks(hw).map(|p| p.iter().copied().sum::<T>() * norm).collect();
        let id = self.id();
        self.tape().op(Tensor::from_parts(vec![n, c], out), &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                for (nc, chunk) in gx.chunks_mut(hw).enumerate() {
                    for v in chunk {
                        *v += g[nc] * norm;
                    }
                }
            }
        })
    }
}

impl<'t, T: Scalar> Add for Var<'t, T> {
    type Output = Var<'t, T>;
    fn add(self, rhs: Self) -> Self::Output {
        self.add_var(rhs)
    }
}

impl<'t, T: Scalar> Sub for Var<'t, T> {
    type Output = Var<'t, T>;
    fn sub(self, rhs: Self) -> Self::Output {
        self.sub_var(rhs)
    }
}

impl<'t, T: Scalar> Mul for Var<'t, T> {
    type Output = Var<'t, T>;
    fn mul(self, rhs: Self) -> Self::Output {
        self.mul_var(rhs)
    }
}

impl<'t, T: Scalar> Neg for Var<'t, T> {
    type Output = Var<'t, T>;
    fn neg(self) -> Self::Output {
        self.scale(-1.0)
    }
}
