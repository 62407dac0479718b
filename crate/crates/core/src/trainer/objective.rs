//! Per-stage generator objective.

use mtr_tensor::{Session, Var};

use crate::config::LossConfig;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::losses::{iuv_loss, lsgan_g_loss, mask_bce, motion_terms, pyramid_perceptual_rec};
use crate::model::{Batch, Discriminator, GenInputs, GenOutputs};
use crate::trainer::schedule::{StageKind, Term};

/// Weight applied to a raw term in the generator objective. Reconstruction
/// terms carry their perceptual and L1 weights internally.
pub fn term_weight(term: Term, w: &LossConfig) -> f64 {
    match term {
        Term::IuvUv => w.lambda_uv,
        Term::IuvCe => w.lambda_ce,
        Term::RecGeo | Term::RecApp | Term::RecD => 1.0,
        Term::MaskGeo | Term::MaskApp | Term::MaskD => w.lambda_mask,
        Term::MotCor => w.lambda_cor,
        Term::MotReg => w.lambda_reg,
        Term::MotTv => w.lambda_tv,
        Term::MotCon => w.lambda_con,
        Term::Adv => w.lambda_adv,
    }
}

fn missing(what: &str) -> Error {
    Error::Contract(format!("stage objective needs the {what} output"))
}

/// Raw (unweighted) loss terms of `kind`. `Term::Adv` is produced only when
/// a discriminator session is supplied.
#[allow(clippy::too_many_arguments)]
pub fn stage_terms<'t, F: FeatureExtractor>(
    kind: StageKind,
    w: &LossConfig,
    fx: &F,
    s: &Session<'t, f32>,
    inp: &GenInputs<'t, f32>,
    out: &GenOutputs<'t, f32>,
    batch: &Batch<f32>,
    disc: Option<(&Discriminator, &Session<'t, f32>)>,
) -> Result<Vec<(Term, Var<'t, f32>)>> {
    let target = s.input(batch.target.clone());
    let target_mask = s.input(batch.target_mask.clone());
    let mut terms = Vec::new();
    for &term in kind.terms() {
        match term {
            Term::IuvUv | Term::IuvCe => {
                if terms.iter().any(|(t, _)| matches!(t, Term::IuvUv | Term::IuvCe)) {
                    continue;
                }
                let tex = out.texture.as_ref().ok_or_else(|| missing("texture"))?;
                let iuv = iuv_loss(&tex.iuv, inp.drv_onehot, &batch.drv_labels, w)?;
                terms.push((Term::IuvUv, iuv.uv));
                terms.push((Term::IuvCe, iuv.ce));
            }
            Term::RecGeo => {
                let tex = out.texture.as_ref().ok_or_else(|| missing("texture"))?;
                let pred = tex.image.mul_gate(target_mask);
                let gt = target.mul_gate(target_mask);
                terms.push((term, pyramid_perceptual_rec(pred, gt, fx, w)?));
            }
            Term::MaskGeo => {
                let tex = out.texture.as_ref().ok_or_else(|| missing("texture"))?;
                terms.push((term, mask_bce(tex.mask, target_mask)?));
            }
            Term::MotCor | Term::MotReg | Term::MotTv | Term::MotCon => {
                if terms.iter().any(|(t, _)| matches!(t, Term::MotCor)) {
                    continue;
                }
                let pyr = out.pyramid.as_ref().ok_or_else(|| missing("flow pyramid"))?;
                let (_, _, h, _) = target.dims4();
                let r = inp.src_img.dims4().2;
                let tgt = if h == r { target } else { target.avg_pool(h / r) };
                let m = motion_terms(pyr, inp.src_img, tgt, fx, w.correctness)?;
                terms.push((Term::MotCor, m.correctness));
                terms.push((Term::MotReg, m.regularization));
                terms.push((Term::MotTv, m.tv));
                terms.push((Term::MotCon, m.consistency));
            }
            Term::RecApp => {
                let warp = out.warp.as_ref().ok_or_else(|| missing("warp"))?;
                terms.push((term, pyramid_perceptual_rec(warp.image, target, fx, w)?));
            }
            Term::MaskApp => {
                let warp = out.warp.as_ref().ok_or_else(|| missing("warp"))?;
                terms.push((term, mask_bce(warp.mask, target_mask)?));
            }
            Term::RecD => {
                let (img, _) = out.blend.ok_or_else(|| missing("blend"))?;
                terms.push((term, pyramid_perceptual_rec(img, target, fx, w)?));
            }
            Term::MaskD => {
                let (_, mask) = out.blend.ok_or_else(|| missing("blend"))?;
                terms.push((term, mask_bce(mask, target_mask)?));
            }
            Term::Adv => {
                if let Some((d, ds)) = disc {
                    let (img, _) = out.blend.ok_or_else(|| missing("blend"))?;
                    terms.push((term, lsgan_g_loss(d.forward(ds, img))));
                }
            }
        }
    }
    Ok(terms)
}

/// Weighted sum of the terms.
pub fn weighted_total<'t>(terms: &[(Term, Var<'t, f32>)], w: &LossConfig) -> Option<Var<'t, f32>> {
    terms.iter().map(|&(t, v)| v.scale(term_weight(t, w))).reduce(|a, b| a + b)
}
