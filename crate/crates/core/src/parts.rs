//! Per-pixel channel softmax over DensePose part scores.

use mtr_tensor::{Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::types::NUM_SCORE_CHANNELS;

/// Softmax over the channel axis of `[N, C, H, W]`, stabilized by the
/// per-pixel maximum.
pub fn softmax_channels<'t, T: Scalar>(logits: Var<'t, T>) -> Var<'t, T> {
    let lv = logits.value();
    let (n, c, h, w) = lv.dims4();
    let hw = h * w;
    let mut out = vec![T::zero(); lv.numel()];
    for b in 0..n {
        let base = b * c * hw;
        for i in 0..hw {
            let mut m = T::neg_infinity();
            for ch in 0..c {
                m = m.max(lv.data()[base + ch * hw + i]);
            }
            let mut z = T::zero();
            for ch in 0..c {
                let e = (lv.data()[base + ch * hw + i] - m).exp();
                out[base + ch * hw + i] = e;
                z += e;
            }
            for ch in 0..c {
                out[base + ch * hw + i] /= z;
            }
        }
    }
    let value = Tensor::new(lv.shape(), out).expect("same shape");
    let probs = value.clone();
    let id = logits.id();
    logits.tape().op(value, &[logits], move |g, sink| {
        if let Some(gx) = sink.slot(id) {
            let p = probs.data();
            for b in 0..n {
                let base = b * c * hw;
                for i in 0..hw {
                    let mut dot = T::zero();
                    for ch in 0..c {
                        dot += g[base + ch * hw + i] * p[base + ch * hw + i];
                    }
                    for ch in 0..c {
                        let k = base + ch * hw + i;
                        gx[k] += p[k] * (g[k] - dot);
                    }
                }
            }
        }
    })
}

/// Part score map `Ŝ` from 25-channel logits. Channel 0 is background.
pub fn softmax_parts<'t, T: Scalar>(logits: Var<'t, T>) -> Result<Var<'t, T>> {
    let lv = logits.value();
    if lv.ndim() != 4 || lv.shape()[1] != NUM_SCORE_CHANNELS {
        return Err(Error::shape(
            "softmax_parts",
            format!("expected [N, {NUM_SCORE_CHANNELS}, H, W], got {:?}", lv.shape()),
        ));
    }
    if !lv.all_finite() {
        return Err(Error::Numeric("softmax_parts: non-finite logits".into()));
    }
    Ok(softmax_channels(logits))
}
