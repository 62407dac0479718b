//! Training objectives. Every norm is a mean over its elements.

use mtr_tensor::{Scalar, Tensor, Var};

use crate::config::LossConfig;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::motion::FlowPyramid;
use crate::sampling::{resize_bilinear, warp};
use crate::texture::TranslatedIuv;
use crate::types::{NUM_PARTS, NUM_SCORE_CHANNELS, ONEHOT_CHANNELS};

/// Window size of the local affine regularizer.
pub const AFFINE_WINDOW: usize = 5;
const NORM_EPS: f64 = 1e-8;
pub const BCE_EPS: f64 = 1e-6;

fn zero<'t, T: Scalar>(like: Var<'t, T>) -> Var<'t, T> {
    like.tape().constant(Tensor::scalar(T::zero()))
}

/// Mean absolute forward difference, pooled over both axes and all channels.
pub fn tv_loss<'t, T: Scalar>(f: Var<'t, T>) -> Var<'t, T> {
    let (n, c, h, w) = f.dims4();
    let count = n * c * (h * (w - 1) + (h - 1) * w);
    if count == 0 {
        return zero(f);
    }
    let mut total: Option<Var<'t, T>> = None;
    if w > 1 {
        total = Some((f.narrow(3, 1, w - 1) - f.narrow(3, 0, w - 1)).abs().sum());
    }
    if h > 1 {
        let dy = (f.narrow(2, 1, h - 1) - f.narrow(2, 0, h - 1)).abs().sum();
        total = Some(match total {
            Some(t) => t + dy,
            None => dy,
        });
    }
    total.expect("non-empty").scale(1.0 / count as f64)
}

/// `sum_l mean|resize(f_0) - f_l|` over the finer levels, with the coarsest
/// flow `f_0` as a constant soft label.
pub fn consistency_loss<'t, T: Scalar>(flows: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let Some(&coarsest) = flows.first() else {
        return Err(Error::shape("consistency_loss", "empty pyramid"));
    };
    if flows.len() < 2 {
        log::warn!("consistency loss needs at least two pyramid levels; returning 0");
        return Ok(zero(coarsest));
    }
    let label = coarsest.detach();
    let mut total: Option<Var<'t, T>> = None;
    for &f in &flows[1..] {
        let (_, _, h, w) = f.dims4();
        let term = (resize_bilinear(label, h, w)? - f).abs().mean();
        total = Some(match total {
            Some(t) => t + term,
            None => term,
        });
    }
    Ok(total.expect("two levels"))
}

/// Mean of `1 - cos(a_p, b_p)` over locations `p` of `[N, C, H, W]` feature
/// maps. Locations where either vector has zero norm are left out.
pub fn cosine_distance<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Var<'t, T> {
    let (av, bv) = (a.value(), b.value());
    assert_eq!(av.shape(), bv.shape(), "cosine_distance: shape mismatch");
    let (n, c, h, w) = av.dims4();
    let hw = h * w;
    let eps = T::lit(NORM_EPS);
    // (index, dot, |a|, |b|) of every valid location
    let mut valid = Vec::with_capacity(n * hw);
    for bi in 0..n {
        for i in 0..hw {
            let (mut dot, mut na, mut nb) = (T::zero(), T::zero(), T::zero());
            for ch in 0..c {
                let k = (bi * c + ch) * hw + i;
                let (x, y) = (av.data()[k], bv.data()[k]);
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            let (na, nb) = (na.sqrt(), nb.sqrt());
            if na > eps && nb > eps {
                valid.push((bi * c * hw + i, dot, na, nb));
            }
        }
    }
    let count = valid.len();
    let loss =
        valid.iter().map(|&(_, dot, na, nb)| T::one() - dot / (na * nb)).sum::<T>() / T::lit(count.max(1) as f64);
    let (aid, bid) = (a.id(), b.id());
    a.tape().op(Tensor::scalar(loss), &[a, b], move |g, sink| {
        let scale = g[0] / T::lit(count.max(1) as f64);
        for (id, x, y) in [(aid, &av, &bv), (bid, &bv, &av)] {
            if let Some(gx) = sink.slot(id) {
                for &(base, dot, na, nb) in &valid {
                    let (nx, ny) = if id == aid { (na, nb) } else { (nb, na) };
                    let cos = dot / (nx * ny);
                    for ch in 0..c {
                        let k = base + ch * hw;
                        gx[k] -= scale * (y.data()[k] / (nx * ny) - cos * x.data()[k] / (nx * nx));
                    }
                }
            }
        }
    })
}

/// Feature-space warping error at the flow's resolution: the first tap of
/// the source, warped by `flow`, against the first tap of the target.
pub fn perceptual_correctness<'t, T: Scalar, F: FeatureExtractor>(
    flow: Var<'t, T>,
    src: Var<'t, T>,
    tgt: Var<'t, T>,
    fx: &F,
) -> Result<Var<'t, T>> {
    let (_, _, h, w) = flow.dims4();
    let (_, _, hi, wi) = src.dims4();
    if tgt.shape() != src.shape() || hi % h != 0 || wi % w != 0 || hi / h != wi / w {
        return Err(Error::shape(
            "perceptual_correctness",
            format!("flow {:?} cannot align with images {:?} / {:?}", flow.shape(), src.shape(), tgt.shape()),
        ));
    }
    let factor = hi / h;
    let pool = |x: Var<'t, T>| if factor == 1 { x } else { x.avg_pool(factor) };
    let fs = fx.taps(pool(src))[0];
    let ft = fx.taps(pool(tgt))[0].detach();
    Ok(cosine_distance(warp(fs, flow)?, ft))
}

/// `I - X (X^T X)^-1 X^T` for the window's `[x, y, 1]` design matrix.
fn affine_residual_projector(k: usize) -> Vec<f64> {
    let n = k * k;
    let half = (k / 2) as f64;
    let coords: Vec<[f64; 3]> = (0..n).map(|i| [(i % k) as f64 - half, (i / k) as f64 - half, 1.0]).collect();
    // Centred coordinates make X^T X diagonal.
    let diag: Vec<f64> = (0..3).map(|j| coords.iter().map(|c| c[j] * c[j]).sum()).collect();
    let mut m = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let p: f64 = (0..3).map(|j| coords[r][j] * coords[c][j] / diag[j]).sum();
            m[r * n + c] = f64::from(u8::from(r == c)) - p;
        }
    }
    m
}

/// [`affine_reg_window`] with the default window.
pub fn affine_reg<'t, T: Scalar>(f: Var<'t, T>) -> Var<'t, T> {
    affine_reg_window(f, AFFINE_WINDOW)
}

/// Mean squared residual of every `k x k` flow window (stride 1, per
/// channel) to its least-squares affine fit in the window coordinates.
pub fn affine_reg_window<'t, T: Scalar>(f: Var<'t, T>, k: usize) -> Var<'t, T> {
    assert!(k >= 3 && k % 2 == 1, "affine window must be odd and at least 3");
    let fv = f.value();
    let (n, c, h, w) = fv.dims4();
    if h < k || w < k {
        log::warn!("affine regularizer: {h}x{w} flow is smaller than the {k}x{k} window; returning 0");
        return zero(f);
    }
    let kk = k * k;
    let m: Vec<T> = affine_residual_projector(k).into_iter().map(T::lit).collect();
    let (wy, wx) = (h - k + 1, w - k + 1);
    let denom = (n * c * wy * wx * kk) as f64;
    let mut residuals = vec![T::zero(); n * c * wy * wx * kk];
    let mut total = T::zero();
    let mut patch = vec![T::zero(); kk];
    for plane in 0..n * c {
        let src = &fv.data()[plane * h * w..(plane + 1) * h * w];
        for y in 0..wy {
            for x in 0..wx {
                for dy in 0..k {
                    patch[dy * k..(dy + 1) * k].copy_from_slice(&src[(y + dy) * w + x..(y + dy) * w + x + k]);
                }
                let r = &mut residuals[((plane * wy + y) * wx + x) * kk..][..kk];
                for (i, ri) in r.iter_mut().enumerate() {
                    *ri = m[i * kk..(i + 1) * kk].iter().zip(&patch).map(|(a, b)| *a * *b).sum();
                    total += *ri * *ri;
                }
            }
        }
    }
    let id = f.id();
    f.tape().op(Tensor::scalar(total / T::lit(denom)), &[f], move |g, sink| {
        if let Some(gf) = sink.slot(id) {
            // d/df sum |M f|^2 = 2 M^T M f = 2 r, since M is a symmetric projector.
            let scale = g[0] * T::lit(2.0 / denom);
            for plane in 0..n * c {
                let dst = &mut gf[plane * h * w..(plane + 1) * h * w];
                for y in 0..wy {
                    for x in 0..wx {
                        let r = &residuals[((plane * wy + y) * wx + x) * kk..][..kk];
                        for dy in 0..k {
                            for dx in 0..k {
                                dst[(y + dy) * w + x + dx] += scale * r[dy * k + dx];
                            }
                        }
                    }
                }
            }
        }
    })
}

/// The four sub-losses of the motion objective.
#[derive(Debug, Clone, Copy)]
pub struct MotionTerms<'t, T: Scalar> {
    pub correctness: Var<'t, T>,
    pub regularization: Var<'t, T>,
    pub tv: Var<'t, T>,
    pub consistency: Var<'t, T>,
}

/// `l_cor * L_cor + l_reg * L_reg + l_tv * L_tv + l_con * L_con`.
pub fn motion_loss<'t, T: Scalar>(w: &LossConfig, t: &MotionTerms<'t, T>) -> Var<'t, T> {
    t.correctness.scale(w.lambda_cor)
        + t.regularization.scale(w.lambda_reg)
        + t.tv.scale(w.lambda_tv)
        + t.consistency.scale(w.lambda_con)
}

fn mean_of<'t, T: Scalar>(terms: Vec<Var<'t, T>>) -> Var<'t, T> {
    let n = terms.len();
    let sum = terms.into_iter().reduce(|a, b| a + b).expect("at least one term");
    sum.scale(1.0 / n as f64)
}

/// Motion sub-losses over a pyramid. Per-level terms are averaged over the
/// levels; `src` and `tgt` are at the working resolution.
pub fn motion_terms<'t, T: Scalar, F: FeatureExtractor>(
    pyr: &FlowPyramid<'t, T>,
    src: Var<'t, T>,
    tgt: Var<'t, T>,
    fx: &F,
    with_correctness: bool,
) -> Result<MotionTerms<'t, T>> {
    let correctness = if with_correctness {
        let per_level = pyr.flows.iter().map(|&f| perceptual_correctness(f, src, tgt, fx)).collect::<Result<_>>()?;
        mean_of(per_level)
    } else {
        zero(src)
    };
    Ok(MotionTerms {
        correctness,
        regularization: mean_of(pyr.flows.iter().map(|&f| affine_reg(f)).collect()),
        tv: mean_of(pyr.flows.iter().map(|&f| tv_loss(f)).collect()),
        consistency: consistency_loss(&pyr.flows)?,
    })
}

/// Mean cross-entropy of `[N, C, H, W]` logits against integer labels.
pub fn cross_entropy<'t, T: Scalar>(logits: Var<'t, T>, labels: &[u8]) -> Result<Var<'t, T>> {
    let lv = logits.value();
    let (n, c, h, w) = lv.dims4();
    let hw = h * w;
    if labels.len() != n * hw || labels.iter().any(|&l| l as usize >= c) {
        return Err(Error::shape("cross_entropy", format!("{} labels for logits {:?}", labels.len(), lv.shape())));
    }
    let mut probs = vec![T::zero(); lv.numel()];
    let mut total = T::zero();
    for b in 0..n {
        for i in 0..hw {
            let at = |ch: usize| (b * c + ch) * hw + i;
            let m = (0..c).map(|ch| lv.data()[at(ch)]).fold(T::neg_infinity(), T::max);
            let z: T = (0..c).map(|ch| (lv.data()[at(ch)] - m).exp()).sum();
            for ch in 0..c {
                probs[at(ch)] = (lv.data()[at(ch)] - m).exp() / z;
            }
            let label = labels[b * hw + i] as usize;
            total += m + z.ln() - lv.data()[at(label)];
        }
    }
    let count = T::lit((n * hw) as f64);
    let labels = labels.to_vec();
    let id = logits.id();
    Ok(logits.tape().op(Tensor::scalar(total / count), &[logits], move |g, sink| {
        if let Some(gl) = sink.slot(id) {
            let s = g[0] / count;
            for b in 0..n {
                for i in 0..hw {
                    for ch in 0..c {
                        let k = (b * c + ch) * hw + i;
                        let y = if labels[b * hw + i] as usize == ch { T::one() } else { T::zero() };
                        gl[k] += s * (probs[k] - y);
                    }
                }
            }
        }
    }))
}

#[derive(Debug, Clone, Copy)]
pub struct IuvLossTerms<'t, T: Scalar> {
    pub uv: Var<'t, T>,
    pub ce: Var<'t, T>,
    pub total: Var<'t, T>,
}

/// `l_uv * sum_k (|S_k (U_k - U^_k)| + |S_k (V_k - V^_k)|) + l_ce * CE(S, S^)`.
///
/// The L1 mask is the predicted score `S^_k`; each part's L1 is a mean over
/// the `N * H * W` pixels. `gt` is the 73-channel one-hot encoding of the
/// driving IUV and `labels` its part indices.
pub fn iuv_loss<'t, T: Scalar>(
    pred: &TranslatedIuv<'t, T>,
    gt: Var<'t, T>,
    labels: &[u8],
    w: &LossConfig,
) -> Result<IuvLossTerms<'t, T>> {
    let (n, c, h, wd) = gt.dims4();
    if c != ONEHOT_CHANNELS || pred.u.shape() != [n, NUM_PARTS, h, wd] || pred.score.dims4().1 != NUM_SCORE_CHANNELS {
        return Err(Error::shape(
            "iuv_loss",
            format!("prediction {:?} and ground truth {:?} are not aligned", pred.u.shape(), gt.shape()),
        ));
    }
    let mask = pred.score.narrow(1, 1, NUM_PARTS);
    let mask = if w.detach_uv_mask { mask.detach() } else { mask };
    let pixels = (n * h * wd) as f64;
    let du = (gt.narrow(1, 0, NUM_PARTS) - pred.u) * mask;
    let dv = (gt.narrow(1, NUM_PARTS, NUM_PARTS) - pred.v) * mask;
    let uv = (du.abs().sum() + dv.abs().sum()).scale(1.0 / pixels);
    let ce = cross_entropy(pred.logits, labels)?;
    Ok(IuvLossTerms { uv, ce, total: uv.scale(w.lambda_uv) + ce.scale(w.lambda_ce) })
}

/// `l_p * sum_{l,i} MSE(phi_i(down^l gt), phi_i(down^l pred)) + l_1 * mean|gt - pred|`.
pub fn pyramid_perceptual_rec<'t, T: Scalar, F: FeatureExtractor>(
    pred: Var<'t, T>,
    gt: Var<'t, T>,
    fx: &F,
    w: &LossConfig,
) -> Result<Var<'t, T>> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape("pyramid_perceptual_rec", format!("{:?} vs {:?}", pred.shape(), gt.shape())));
    }
    let l1 = (gt - pred).abs().mean();
    let (mut p, mut g) = (pred, gt.detach());
    let mut perceptual: Option<Var<'t, T>> = None;
    for level in 0..w.n_scales {
        if level > 0 {
            let (_, _, h, wd) = p.dims4();
            if h % 2 != 0 || wd % 2 != 0 || h < 2 {
                break;
            }
            p = p.avg_pool(2);
            g = g.avg_pool(2);
        }
        for (fp, fg) in fx.taps(p).into_iter().zip(fx.taps(g)) {
            let term = (fg - fp).square().mean();
            perceptual = Some(match perceptual {
                Some(acc) => acc + term,
                None => term,
            });
        }
    }
    let perceptual = perceptual.expect("at least one scale");
    Ok(perceptual.scale(w.lambda_p) + l1.scale(w.lambda_1))
}

/// Binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn mask_bce<'t, T: Scalar>(pred: Var<'t, T>, gt: Var<'t, T>) -> Result<Var<'t, T>> {
    let (pv, gv) = (pred.value(), gt.value());
    if pv.shape() != gv.shape() {
        return Err(Error::shape("mask_bce", format!("{:?} vs {:?}", pv.shape(), gv.shape())));
    }
    let (lo, hi) = (T::lit(BCE_EPS), T::lit(1.0 - BCE_EPS));
    let count = T::lit(pv.numel().max(1) as f64);
    let total: T = pv
        .data()
        .iter()
        .zip(gv.data())
        .map(|(&p, &m)| {
            let p = p.max(lo).min(hi);
            -(m * p.ln() + (T::one() - m) * (T::one() - p).ln())
        })
        .sum();
    let (pid, gid) = (pred.id(), gt.id());
    Ok(pred.tape().op(Tensor::scalar(total / count), &[pred, gt], move |g, sink| {
        let s = g[0] / count;
        if let Some(gp) = sink.slot(pid) {
            for ((d, &p), &m) in gp.iter_mut().zip(pv.data()).zip(gv.data()) {
                if p > lo && p < hi {
                    *d += s * ((T::one() - m) / (T::one() - p) - m / p);
                }
            }
        }
        if let Some(gm) = sink.slot(gid) {
            for ((d, &p), _) in gm.iter_mut().zip(pv.data()).zip(gv.data()) {
                let p = p.max(lo).min(hi);
                *d += s * ((T::one() - p).ln() - p.ln());
            }
        }
    }))
}

/// `1/2 E[(D(real) - 1)^2] + 1/2 E[D(fake)^2]`.
pub fn lsgan_d_loss<'t, T: Scalar>(d_real: Var<'t, T>, d_fake: Var<'t, T>) -> Var<'t, T> {
    d_real.shift(-1.0).square().mean().scale(0.5) + d_fake.square().mean().scale(0.5)
}

/// `1/2 E[(D(fake) - 1)^2]`.
pub fn lsgan_g_loss<'t, T: Scalar>(d_fake: Var<'t, T>) -> Var<'t, T> {
    d_fake.shift(-1.0).square().mean().scale(0.5)
}
