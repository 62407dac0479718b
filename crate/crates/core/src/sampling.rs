//! Differentiable bilinear grid sampling.
//!
//! Grids hold normalized coordinates in `[-1, 1]`, channel 0 = x (width axis),
//! channel 1 = y. Coordinate `-1` is the centre of the first texel and `+1`
//! the centre of the last one. Out-of-range coordinates clamp to the border,
//! where the gradient with respect to the grid is zero.

use mtr_tensor::{Scalar, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    frac: T,
    /// d(texel position)/d(normalized coordinate); zero when clamped.
    dpos: T,
}

fn tap<T: Scalar>(g: T, size: usize) -> Tap<T> {
    if size == 1 {
        return Tap { i0: 0, i1: 0, frac: T::zero(), dpos: T::zero() };
    }
    let half_extent = T::lit((size - 1) as f64 * 0.5);
    let raw = (g + T::one()) * half_extent;
    let max = T::lit((size - 1) as f64);
    let (pos, dpos) = if raw < T::zero() {
        (T::zero(), T::zero())
    } else if raw > max {
        (max, T::zero())
    } else {
        (raw, half_extent)
    };
    let i0 = (pos.floor().to_usize().unwrap_or(0)).min(size - 2);
    Tap { i0, i1: i0 + 1, frac: pos - T::lit(i0 as f64), dpos }
}

/// Samples `source: [N, C, Ha, Wa]` at `grid: [N, 2, H, W]`, giving `[N, C, H, W]`.
pub fn bilinear_sample<'t, T: Scalar>(source: Var<'t, T>, grid: Var<'t, T>) -> Result<Var<'t, T>> {
    let (sv, gv) = (source.value(), grid.value());
    if sv.ndim() != 4 || gv.ndim() != 4 {
        return Err(Error::shape("bilinear_sample", "source and grid must be rank 4"));
    }
    let (n, c, ha, wa) = sv.dims4();
    let (gn, two, h, w) = gv.dims4();
    if gn != n || two != 2 {
        return Err(Error::shape(
            "bilinear_sample",
            format!("grid {:?} does not match source {:?}", gv.shape(), sv.shape()),
        ));
    }
    if !gv.all_finite() {
        return Err(Error::Numeric("bilinear_sample: non-finite grid coordinate".into()));
    }
    let hw = h * w;
    let mut taps = Vec::with_capacity(n * hw);
    for b in 0..n {
        let gx = &gv.data()[(2 * b) * hw..(2 * b + 1) * hw];
        let gy = &gv.data()[(2 * b + 1) * hw..(2 * b + 2) * hw];
        for i in 0..hw {
            taps.push((tap(gx[i], wa), tap(gy[i], ha)));
        }
    }
    let plane = ha * wa;
    let mut out = vec![T::zero(); n * c * hw];
    for b in 0..n {
        for ch in 0..c {
            let src = &sv.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
            let dst = &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for (i, (tx, ty)) in taps[b * hw..(b + 1) * hw].iter().enumerate() {
                let v00 = src[ty.i0 * wa + tx.i0];
                let v01 = src[ty.i0 * wa + tx.i1.min(wa - 1)];
                let v10 = src[ty.i1.min(ha - 1) * wa + tx.i0];
                let v11 = src[ty.i1.min(ha - 1) * wa + tx.i1.min(wa - 1)];
                let top = v00 + (v01 - v00) * tx.frac;
                let bot = v10 + (v11 - v10) * tx.frac;
                dst[i] = top + (bot - top) * ty.frac;
            }
        }
    }
    let (sid, gid) = (source.id(), grid.id());
    let value = Tensor::new(&[n, c, h, w], out)?;
    Ok(source.tape().op(value, &[source, grid], move |g, sink| {
        if let Some(gs) = sink.slot(sid) {
            for b in 0..n {
                for ch in 0..c {
                    let dst = &mut gs[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    let go = &g[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    for (i, (tx, ty)) in taps[b * hw..(b + 1) * hw].iter().enumerate() {
                        let (fx, fy) = (tx.frac, ty.frac);
                        let (x1, y1) = (tx.i1.min(wa - 1), ty.i1.min(ha - 1));
                        dst[ty.i0 * wa + tx.i0] += go[i] * (T::one() - fx) * (T::one() - fy);
                        dst[ty.i0 * wa + x1] += go[i] * fx * (T::one() - fy);
                        dst[y1 * wa + tx.i0] += go[i] * (T::one() - fx) * fy;
                        dst[y1 * wa + x1] += go[i] * fx * fy;
                    }
                }
            }
        }
        if let Some(gg) = sink.slot(gid) {
            for b in 0..n {
                for ch in 0..c {
                    let src = &sv.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    let go = &g[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    for (i, (tx, ty)) in taps[b * hw..(b + 1) * hw].iter().enumerate() {
                        let (x1, y1) = (tx.i1.min(wa - 1), ty.i1.min(ha - 1));
                        let v00 = src[ty.i0 * wa + tx.i0];
                        let v01 = src[ty.i0 * wa + x1];
                        let v10 = src[y1 * wa + tx.i0];
                        let v11 = src[y1 * wa + x1];
                        let (fx, fy) = (tx.frac, ty.frac);
                        let dx = ((v01 - v00) * (T::one() - fy) + (v11 - v10) * fy) * tx.dpos;
                        let dy = ((v10 - v00) * (T::one() - fx) + (v11 - v01) * fx) * ty.dpos;
                        gg[(2 * b) * hw + i] += go[i] * dx;
                        gg[(2 * b + 1) * hw + i] += go[i] * dy;
                    }
                }
            }
        }
    }))
}

/// Normalized coordinate of texel `i` along an axis of `size` texels.
pub fn texel_coord(i: usize, size: usize) -> f64 {
    if size == 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (size - 1) as f64
    }
}

/// Grid that samples every texel centre of an `h x w` map: `[n, 2, h, w]`.
pub fn identity_grid<T: Scalar>(n: usize, h: usize, w: usize) -> Tensor<T> {
    let hw = h * w;
    Tensor::from_fn(&[n, 2, h, w], |idx| {
        let axis = (idx / hw) % 2;
        let (y, x) = ((idx % hw) / w, idx % w);
        T::lit(if axis == 0 { texel_coord(x, w) } else { texel_coord(y, h) })
    })
}

/// Bilinear resize of `[N, C, H, W]` to `h x w` under the texel-centre convention.
pub fn resize_bilinear<'t, T: Scalar>(x: Var<'t, T>, h: usize, w: usize) -> Result<Var<'t, T>> {
    let (n, _, hi, wi) = x.dims4();
    if (hi, wi) == (h, w) {
        return Ok(x);
    }
    let grid = x.tape().constant(identity_grid(n, h, w));
    bilinear_sample(x, grid)
}

/// Bilinear upsampling of a flow field; flows are resolution independent in
/// normalized coordinates so magnitudes are kept.
pub fn upsample_flow<'t, T: Scalar>(flow: Var<'t, T>, h: usize, w: usize) -> Result<Var<'t, T>> {
    let (_, c, hi, wi) = flow.dims4();
    if c != 2 {
        return Err(Error::shape("upsample_flow", format!("flow needs 2 channels, got {c}")));
    }
    if h < hi || w < wi {
        return Err(Error::Contract(format!("upsample_flow: cannot downsample {hi}x{wi} to {h}x{w}")));
    }
    resize_bilinear(flow, h, w)
}

/// `Warp(z, f)`: samples `z` at `identity + f`.
pub fn warp<'t, T: Scalar>(z: Var<'t, T>, flow: Var<'t, T>) -> Result<Var<'t, T>> {
    let (n, _, h, w) = z.dims4();
    if flow.shape() != [n, 2, h, w] {
        return Err(Error::shape("warp", format!("flow {:?} does not match feature {:?}", flow.shape(), z.shape())));
    }
    let grid = z.tape().constant(identity_grid(n, h, w)) + flow;
    bilinear_sample(z, grid)
}
