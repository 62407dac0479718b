//! Closed-form values of every loss and metric on hand-built inputs.

use mtr_core::config::LossConfig;
use mtr_core::features::RandomConvFeatures;
use mtr_core::losses::{
    affine_reg, consistency_loss, cosine_distance, iuv_loss, lsgan_d_loss, lsgan_g_loss, mask_bce, motion_loss,
    perceptual_correctness, pyramid_perceptual_rec, tv_loss, MotionTerms,
};
use mtr_core::metrics::{aed_embeddings, akd, fid_embeddings, l1_metric, mkr};
use mtr_core::texture::TranslatedIuv;
use mtr_core::types::{Image, Keypoint, KeypointSet, NUM_PARTS, NUM_SCORE_CHANNELS, ONEHOT_CHANNELS};
use mtr_tensor::{Tape, Tensor};
use rand::Rng;

use super::gen::{normal, rng, uniform};

type Check = Result<(), String>;

fn expect(name: &str, got: f64, want: f64, tol: f64) -> Check {
    if (got - want).abs() <= tol && got.is_finite() {
        Ok(())
    } else {
        Err(format!("{name}: got {got}, expected {want} within {tol:e}"))
    }
}

fn ensure(name: &str, ok: bool, detail: impl std::fmt::Display) -> Check {
    if ok {
        Ok(())
    } else {
        Err(format!("{name}: {detail}"))
    }
}

fn full(shape: &[usize], v: f64) -> Tensor<f64> {
    Tensor::full(shape, v)
}

pub fn tv() -> Check {
    let t = Tape::new();
    expect("tv constant", tv_loss(t.constant(full(&[1, 2, 4, 4], 0.7))).item(), 0.0, 1e-12)?;
    let step = Tensor::new(&[1, 2, 1, 2], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
    expect("tv 1x2 step", tv_loss(t.constant(step)).item(), 0.5, 1e-12)?;
    let f = normal(&[2, 2, 5, 5], &mut rng(1));
    let once = tv_loss(t.constant(f.clone())).item();
    expect("tv homogeneity", tv_loss(t.constant(f.map(|v| 2.0 * v))).item(), 2.0 * once, 1e-12)
}

pub fn consistency() -> Check {
    let t = Tape::new();
    let levels = [t.constant(full(&[1, 2, 2, 2], 0.3)), t.constant(full(&[1, 2, 4, 4], 0.3))];
    expect("consistency equal levels", consistency_loss(&levels).unwrap().item(), 0.0, 1e-12)?;
    let low = t.leaf(full(&[1, 2, 2, 2], 0.0), true);
    let high = Tensor::from_fn(&[1, 2, 4, 4], |i| if i < 16 { 0.2 } else { 0.0 });
    let high = t.leaf(high, true);
    let loss = consistency_loss(&[low, high]).unwrap();
    expect("consistency soft label", loss.item(), 0.1, 1e-12)?;
    let g = t.backward(loss);
    let grad_low = g.get(low).map(|x| x.data().iter().map(|v| v.abs()).sum::<f64>()).unwrap_or(0.0);
    ensure("consistency stop-gradient", grad_low == 0.0, format!("|grad| of lowest level = {grad_low}"))
}

pub fn correctness() -> Check {
    let t = Tape::new();
    let fx = RandomConvFeatures::default();
    let img = t.constant(uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut rng(2)));
    let zero = t.constant(full(&[1, 2, 8, 8], 0.0));
    expect("correctness src==tgt", perceptual_correctness(zero, img, img, &fx).unwrap().item(), 0.0, 1e-9)?;
    let mut r = rng(3);
    for _ in 0..20 {
        let d = cosine_distance(t.constant(normal(&[2, 4, 3, 3], &mut r)), t.constant(normal(&[2, 4, 3, 3], &mut r)));
        ensure("cosine range", (0.0..=2.0).contains(&d.item()), format!("{} outside [0, 2]", d.item()))?;
    }
    Ok(())
}

pub fn affine() -> Check {
    let (h, w) = (7, 9);
    let affine = Tensor::from_fn(&[1, 2, h, w], |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        let (x, y) = (x as f64, y as f64);
        if c == 0 {
            0.3 * x - 0.2 * y + 0.1
        } else {
            -0.05 * x + 0.4 * y - 0.7
        }
    });
    let t = Tape::new();
    expect("affine_reg affine flow", affine_reg(t.constant(affine)).item(), 0.0, 1e-6)?;
    let random = affine_reg(t.constant(normal(&[1, 2, h, w], &mut rng(4)))).item();
    ensure("affine_reg random flow", random > 0.0, format!("{random} not positive"))
}

pub fn motion() -> Check {
    let t = Tape::new();
    let w = LossConfig::default();
    let terms = |v: f64| {
        let s = t.constant(Tensor::scalar(v));
        MotionTerms { correctness: s, regularization: s, tv: s, consistency: s }
    };
    expect("motion_loss zero", motion_loss(&w, &terms(0.0)).item(), 0.0, 0.0)?;
    let unit = motion_loss(&w, &terms(1.0)).item();
    ensure("motion_loss unit", unit == 11.01, format!("got {unit}, expected exactly 11.01"))?;
    let mixed = MotionTerms {
        correctness: t.constant(Tensor::scalar(0.4)),
        regularization: t.constant(Tensor::scalar(2.5)),
        tv: t.constant(Tensor::scalar(0.3)),
        consistency: t.constant(Tensor::scalar(0.9)),
    };
    let doubled = LossConfig { lambda_tv: 2.0 * w.lambda_tv, ..w.clone() };
    let delta = motion_loss(&doubled, &mixed).item() - motion_loss(&w, &mixed).item();
    expect("motion_loss linear in lambda_tv", delta, 0.3, 1e-12)
}

/// `[1, 73, h, w]` one-hot ground truth with every pixel on part 1
/// (channel 0 of U and V) except the first row, which is background.
fn iuv_truth(h: usize, w: usize, u: f64, v: f64) -> (Tensor<f64>, Vec<u8>) {
    let hw = h * w;
    let labels: Vec<u8> = (0..hw).map(|i| u8::from(i >= w)).collect();
    let mut gt = full(&[1, ONEHOT_CHANNELS, h, w], 0.0);
    for (i, &l) in labels.iter().enumerate() {
        if l == 1 {
            gt.data_mut()[i] = u;
            gt.data_mut()[NUM_PARTS * hw + i] = v;
        }
        gt.data_mut()[(2 * NUM_PARTS + l as usize) * hw + i] = 1.0;
    }
    (gt, labels)
}

pub fn iuv() -> Check {
    let (h, w) = (4, 4);
    let hw = h * w;
    let cfg = LossConfig::default();
    let t = Tape::new();
    let (gt, labels) = iuv_truth(h, w, 0.6, 0.3);
    let onehot_score = Tensor::from_fn(&[1, NUM_SCORE_CHANNELS, h, w], |k| gt.data()[2 * NUM_PARTS * hw + k]);
    let uv_of = |u: f64, v: f64| {
        let mut uu = full(&[1, NUM_PARTS, h, w], 0.0);
        let mut vv = full(&[1, NUM_PARTS, h, w], 0.0);
        for (i, &l) in labels.iter().enumerate() {
            if l == 1 {
                uu.data_mut()[i] = u;
                vv.data_mut()[i] = v;
            }
        }
        (t.constant(uu), t.constant(vv))
    };

    let (u, v) = uv_of(0.6, 0.3);
    let random_score = t.constant(uniform(&[1, NUM_SCORE_CHANNELS, h, w], 0.0, 1.0, &mut rng(5)));
    let logits = t.constant(full(&[1, NUM_SCORE_CHANNELS, h, w], 0.0));
    let exact = TranslatedIuv { u, v, score: random_score, logits };
    let terms = iuv_loss(&exact, t.constant(gt.clone()), &labels, &cfg).unwrap();
    expect("iuv uv term exact coordinates", terms.uv.item(), 0.0, 1e-12)?;
    expect("iuv uniform ce", terms.ce.item(), (NUM_SCORE_CHANNELS as f64).ln(), 1e-12)?;

    let (u, v) = uv_of(0.7, 0.4);
    let off = TranslatedIuv { u, v, score: t.constant(onehot_score), logits };
    let terms = iuv_loss(&off, t.constant(gt), &labels, &cfg).unwrap();
    let fraction = (hw - w) as f64 / hw as f64;
    expect("iuv uv offset 0.1", terms.uv.scale(cfg.lambda_uv).item(), cfg.lambda_uv * 2.0 * 0.1 * fraction, 1e-12)
}

pub fn reconstruction() -> Check {
    let t = Tape::new();
    let fx = RandomConvFeatures::default();
    let gt = uniform(&[1, 3, 16, 16], 0.1, 0.8, &mut rng(6));
    let cfg = LossConfig::default();
    let same = pyramid_perceptual_rec(t.constant(gt.clone()), t.constant(gt.clone()), &fx, &cfg).unwrap();
    expect("reconstruction pred==gt", same.item(), 0.0, 1e-12)?;
    let l1_only = LossConfig { lambda_p: 0.0, ..cfg };
    let shifted = pyramid_perceptual_rec(t.constant(gt.map(|v| v + 0.1)), t.constant(gt), &fx, &l1_only).unwrap();
    expect("reconstruction L1 offset", shifted.item(), 0.1, 1e-12)
}

pub fn mask() -> Check {
    let t = Tape::new();
    let gt = Tensor::from_fn(&[2, 1, 4, 4], |i| f64::from(u8::from(i % 3 == 0)));
    let exact = mask_bce(t.constant(gt.clone()), t.constant(gt.clone())).unwrap().item();
    ensure("mask_bce exact", (0.0..=1e-5).contains(&exact), format!("{exact} not within 1e-5 of 0"))?;
    let half = mask_bce(t.constant(full(&[2, 1, 4, 4], 0.5)), t.constant(gt)).unwrap().item();
    expect("mask_bce half", half, std::f64::consts::LN_2, 1e-6)?;
    let pred = t.leaf(full(&[1, 1, 1, 2], 0.3), true);
    let loss = mask_bce(pred, t.constant(full(&[1, 1, 1, 2], 1.0))).unwrap();
    let g = t.backward(loss);
    let grad = g.get(pred).expect("gradient for pred");
    ensure("mask_bce gradient sign", grad.data().iter().all(|&d| d < 0.0), format!("{:?}", grad.data()))
}

pub fn lsgan() -> Check {
    let t = Tape::new();
    let map = |v: f64| t.constant(full(&[2, 1, 3, 3], v));
    expect("lsgan d (1, 0)", lsgan_d_loss(map(1.0), map(0.0)).item(), 0.0, 1e-12)?;
    expect("lsgan g (0)", lsgan_g_loss(map(0.0)).item(), 0.5, 1e-12)?;
    expect("lsgan d (0, 1)", lsgan_d_loss(map(0.0), map(1.0)).item(), 1.0, 1e-12)?;
    expect("lsgan g (1)", lsgan_g_loss(map(1.0)).item(), 0.0, 1e-12)
}

fn image(seed: u64) -> Image {
    Image::new(uniform(&[3, 6, 5], 0.0, 0.9, &mut rng(seed)).cast()).unwrap()
}

pub fn l1() -> Check {
    let a = image(7);
    expect("l1 identical", l1_metric(&a, &a).unwrap(), 0.0, 0.0)?;
    let b = Image::new(a.tensor().map(|v| v + 0.1)).unwrap();
    expect("l1 offset", l1_metric(&b, &a).unwrap(), 0.1, 1e-6)
}

pub fn aed() -> Check {
    let reference = vec![0.2, -1.0, 3.0];
    expect("aed identical", aed_embeddings(&[reference.clone(), reference.clone()], &reference).unwrap(), 0.0, 0.0)?;
    let shifted: Vec<Vec<f64>> = (0..3)
        .map(|axis| reference.iter().enumerate().map(|(i, &v)| if i == axis { v + 1.0 } else { v }).collect())
        .collect();
    expect("aed unit vector", aed_embeddings(&shifted, &reference).unwrap(), 1.0, 1e-12)
}

fn kp(x: f32, y: f32) -> Keypoint {
    Keypoint { x, y, present: true }
}

/// Coordinates on a 1/8 pixel lattice, so `f32` offsets stay exact.
fn kps(seed: u64, frames: usize, joints: usize) -> Vec<KeypointSet> {
    let mut r = rng(seed);
    let mut coord = || r.random_range(0..480u16) as f32 / 8.0;
    (0..frames).map(|_| (0..joints).map(|_| kp(coord(), coord())).collect()).collect()
}

pub fn akd_fixed() -> Check {
    let gt = kps(8, 3, 7);
    expect("akd identical", akd(&gt, &gt).unwrap(), 0.0, 0.0)?;
    let moved: Vec<KeypointSet> = gt.iter().map(|f| f.iter().map(|k| kp(k.x + 3.0, k.y + 4.0)).collect()).collect();
    expect("akd (3, 4) offset", akd(&moved, &gt).unwrap(), 5.0, 1e-9)?;
    let pred = vec![vec![kp(10.0, 11.0), Keypoint::MISSING]];
    let truth = vec![vec![kp(10.0, 10.0), kp(5.0, 5.0)]];
    expect("akd partial", akd(&pred, &truth).unwrap(), 1.0, 1e-12)?;
    let symmetric = (akd(&moved, &gt).unwrap() - akd(&gt, &moved).unwrap()).abs();
    ensure("akd symmetric", symmetric == 0.0, format!("asymmetry {symmetric}"))
}

pub fn mkr_fixed() -> Check {
    let gt = kps(9, 1, 10);
    expect("mkr all present", mkr(&gt, &gt).unwrap(), 0.0, 0.0)?;
    let mut pred = gt.clone();
    pred[0][4] = Keypoint::MISSING;
    expect("mkr one of ten", mkr(&pred, &gt).unwrap(), 0.1, 1e-12)?;
    let mut gt_partial = gt.clone();
    gt_partial[0][4] = Keypoint::MISSING;
    expect("mkr absent in truth", mkr(&pred, &gt_partial).unwrap(), 0.0, 0.0)?;
    ensure(
        "mkr directional",
        mkr(&gt_partial, &pred).unwrap() == 0.0 && mkr(&gt, &pred).unwrap() == 0.0,
        "extra predicted joints must not count",
    )
}

pub fn fid_fixed() -> Check {
    let mut r = rng(10);
    let a: Vec<Vec<f64>> = (0..64).map(|_| normal(&[6], &mut r).data().to_vec()).collect();
    expect("fid identical sets", fid_embeddings(&a, &a).unwrap(), 0.0, 1e-5)?;

    let (n, dim, d) = (10_000, 4, 2.0);
    let a: Vec<Vec<f64>> = (0..n).map(|_| normal(&[dim], &mut r).data().to_vec()).collect();
    let mut b: Vec<Vec<f64>> = (0..n).map(|_| normal(&[dim], &mut r).data().to_vec()).collect();
    for e in &mut b {
        e[0] += d * 0.6;
        e[1] += d * 0.8;
    }
    // Four standard deviations of the mean-difference estimate plus the
    // covariance estimation bias.
    let tol = 4.0 * 2.0 * d * (2.0 / n as f64).sqrt() + 4.0 * dim as f64 / n as f64;
    let value = fid_embeddings(&a, &b).unwrap();
    expect("fid gaussian offset", value, d * d, tol)?;

    let mut shuffled = b.clone();
    shuffled.reverse();
    shuffled.swap(0, n / 2);
    expect("fid order invariance", fid_embeddings(&a, &shuffled).unwrap(), value, 1e-9)
}

/// Every fixed-point check with its name.
type Group = fn() -> Check;

pub fn all() -> Vec<(&'static str, Check)> {
    let checks: [(&str, Group); 14] = [
        ("tv_loss", tv),
        ("consistency_loss", consistency),
        ("perceptual_correctness", correctness),
        ("affine_reg", affine),
        ("motion_loss", motion),
        ("iuv_loss", iuv),
        ("pyramid_perceptual_rec", reconstruction),
        ("mask_bce", mask),
        ("lsgan", lsgan),
        ("l1_metric", l1),
        ("aed", aed),
        ("akd", akd_fixed),
        ("mkr", mkr_fixed),
        ("fid", fid_fixed),
    ];
    checks.iter().map(|&(n, f)| (n, f())).collect()
}
