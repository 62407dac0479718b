//! Analytic against central-difference gradients (float64) on random 4x4
//! instances. Each check returns the worst relative error over all
//! instances and inputs.

use mtr_core::blender::Blender;
use mtr_core::config::{LossConfig, ModelConfig};
use mtr_core::features::RandomConvFeatures;
use mtr_core::losses::{
    affine_reg_window, consistency_loss, cosine_distance, cross_entropy, iuv_loss, lsgan_d_loss, lsgan_g_loss,
    mask_bce, motion_loss, motion_terms, perceptual_correctness, pyramid_perceptual_rec, tv_loss,
};
use mtr_core::motion::FlowPyramid;
use mtr_core::parts::softmax_parts;
use mtr_core::sampling::bilinear_sample;
use mtr_core::texture::{fuse_parts, sample_atlas, TranslatedIuv};
use mtr_core::warp::warp_fuse;
use mtr_tensor::gradcheck::check;
use mtr_tensor::{ParamStore, Session, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gen::{nonzero, normal, rng, simplex, smooth_flow, smooth_grid, smooth_uv, uniform};
use super::oracles;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
pub const SIDE: usize = 4;
const S: usize = SIDE;

/// Contracts an output with fixed random weights so that every element
/// contributes to the scalar.
fn probe<'t>(v: Var<'t, f64>, seed: u64) -> Var<'t, f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w = v.tape().constant(Tensor::randn(&v.shape(), 1.0, &mut r));
    (v * w).sum()
}

fn worst(errors: impl IntoIterator<Item = f64>) -> f64 {
    errors.into_iter().fold(0.0, f64::max)
}

/// Checks `f` with respect to each of `inputs` in turn, the others held
/// constant.
fn check_each<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Var<'t, f64>,
{
    worst((0..inputs.len()).map(|i| {
        let f = &f;
        check(&inputs[i], STEP, move |x| {
            let tape = x.tape();
            let vars: Vec<Var<'_, f64>> =
                inputs.iter().enumerate().map(|(j, t)| if j == i { x } else { tape.constant(t.clone()) }).collect();
            f(&vars)
        })
    }))
}

pub fn bilinear(instances: usize) -> f64 {
    worst((0..instances).map(|k| {
        let mut r = rng(100 + k as u64);
        let src = normal(&[1, 2, S, S], &mut r);
        let grid = smooth_grid(1, S, S, S, S, &mut r);
        check_each(&[src, grid], |v| probe(bilinear_sample(v[0], v[1]).unwrap(), k as u64))
    }))
}

pub fn warp_fuse_grad(instances: usize) -> f64 {
    worst((0..instances).map(|k| {
        let mut r = rng(200 + k as u64);
        let z = normal(&[1, 2, S, S], &mut r);
        let flow = smooth_flow(1, S, S, &mut r);
        let occ = uniform(&[1, 1, S, S], 0.05, 0.95, &mut r);
        let prev = normal(&[1, 2, S, S], &mut r);
        check_each(&[z, flow, occ, prev], |v| probe(warp_fuse(v[0], v[1], v[2], v[3]).unwrap(), k as u64))
    }))
}

pub fn sample_atlas_grad(instances: usize) -> f64 {
    const C: usize = 2;
    worst((0..instances).map(|k| {
        let mut r = rng(300 + k as u64);
        let atlas = normal(&[1, 24 * C, S, S], &mut r);
        let u = smooth_uv(1, 24, S, S, S, &mut r);
        let v = smooth_uv(1, 24, S, S, S, &mut r);
        check_each(&[atlas, u, v], |x| {
            let parts = sample_atlas(x[0], x[1], x[2], C).unwrap();
            let stacked = Var::concat(&parts, 1);
            probe(stacked, k as u64)
        })
    }))
}

pub fn fuse_parts_grad(instances: usize) -> f64 {
    const C: usize = 2;
    worst((0..instances).map(|k| {
        let mut r = rng(400 + k as u64);
        let parts = normal(&[1, 24 * C, S, S], &mut r);
        let score = simplex(1, 25, S, S, &mut r);
        check_each(&[parts, score], |x| {
            let split: Vec<_> = (0..24).map(|p| x[0].narrow(1, p * C, C)).collect();
            probe(fuse_parts(&split, x[1]).unwrap(), k as u64)
        })
    }))
}

pub fn blend_grad(instances: usize) -> f64 {
    let cfg = ModelConfig {
        in_res: S,
        super_resolution: false,
        atlas_channels: 2,
        warp_channels: 2,
        blend_width: 4,
        ..ModelConfig::default()
    };
    worst((0..instances).map(|k| {
        let mut store = ParamStore::<f64>::new();
        let blender = Blender::new(&mut store, &cfg, &mut rng(500 + k as u64));
        // Sessions borrow the store for the tape's lifetime, which the
        // checker chooses per evaluation.
        let store: &'static ParamStore<f64> = Box::leak(Box::new(store));
        let mut r = rng(550 + k as u64);
        let z_geo = normal(&[1, 2, S, S], &mut r);
        let z_app = normal(&[1, 2, S, S], &mut r);
        let coarse = uniform(&[1, 3, S, S], 0.0, 1.0, &mut r);
        check_each(&[z_geo, z_app, coarse], |x| {
            let s = Session::frozen(x[0].tape(), store);
            let (img, mask) = blender.blend(&s, x[0], x[1], x[2]).unwrap();
            probe(img, k as u64) + probe(mask, k as u64 + 1)
        })
    }))
}

pub fn softmax_parts_grad(instances: usize) -> f64 {
    worst((0..instances).map(|k| {
        let logits = normal(&[1, 25, S, S], &mut rng(600 + k as u64));
        check_each(&[logits], |x| probe(softmax_parts(x[0]).unwrap(), k as u64))
    }))
}

pub fn tv(instances: usize) -> f64 {
    worst((0..instances).map(|k| {
        let f = normal(&[1, 2, S, S], &mut rng(700 + k as u64));
        check_each(&[f], |x| tv_loss(x[0]))
    }))
}

/// The coarsest level is a detached label, so only finer levels are checked.
pub fn consistency(instances: usize) -> f64 {
    worst((0..instances).map(|k| {
        let mut r = rng(800 + k as u64);
        let coarse = normal(&[1, 2, S / 2, S / 2], &mut r);
        let mid = normal(&[1, 2, S, S], &mut r);
        let fine = normal(&[1, 2, S, S], &mut r);
        let c = coarse.clone();
        check_each(&[mid, fine], move |x| {
            let label = x[0].tape().constant(c.clone());
            consistency_loss(&[label, x[0], x[1]]).unwrap()
        })
    }))
}

pub fn cosine(instances: usize) -> f64 {
    worst((0..instances).map(|k| {
        let mut r = rng(900 + k as u64);
        let a = nonzero(&[1, 3, S, S], &mut r);
        let b = nonzero(&[1, 3, S, S], &mut r);
        check_each(&[a, b], |x| cosine_distance(x[0], x[1]))
    }))
}

/// The target features are detached; flow and source are checked.
pub fn correctness(instances: usize) -> f64 {
    let fx = RandomConvFeatures::default();
    worst((0..instances).map(|k| {
        let mut r = rng(1000 + k as u64);
        let flow = smooth_flow(1, S, S, &mut r);
        let src = uniform(&[1, 3, S, S], 0.0, 1.0, &mut r);
        let tgt = uniform(&[1, 3, S, S], 0.0, 1.0, &mut r);
        let fx = &fx;
        let t = tgt.clone();
        check_each(&[flow, src], move |x| {
            perceptual_correctness(x[0], x[1], x[0].tape().constant(t.clone()), fx).unwrap()
        })
    }))
}

pub fn affine(instances: usize) -> f64 {
    worst((0..instances).map(|k| {
        let f = normal(&[1, 2, S, S], &mut rng(1100 + k as u64));
        check_each(&[f], |x| affine_reg_window(x[0], 3))
    }))
}

/// Weighted motion objective with respect to the finest flow.
pub fn motion(instances: usize) -> f64 {
    let fx = RandomConvFeatures::default();
    let w = LossConfig::default();
    worst((0..instances).map(|k| {
        let mut r = rng(1200 + k as u64);
        let coarse = normal(&[1, 2, S / 2, S / 2], &mut r).map(|v| 0.1 * v);
        // Keep the finest flow off the |.| kink of the consistency term.
        let label = oracles::resize(coarse.data(), [1, 2, S / 2, S / 2], S, S);
        let fine = loop {
            let f = smooth_flow(1, S, S, &mut r);
            if f.data().iter().zip(&label).all(|(a, b)| (a - b).abs() > 0.01) {
                break f;
            }
        };
        let occ = Tensor::full(&[1, 1, S, S], 0.5);
        let src = uniform(&[1, 3, S, S], 0.0, 1.0, &mut r);
        let tgt = uniform(&[1, 3, S, S], 0.0, 1.0, &mut r);
        let (fx, w) = (&fx, &w);
        check_each(&[fine], move |x| {
            let t = x[0].tape();
            let occ0 = t.constant(Tensor::full(&[1, 1, S / 2, S / 2], 0.5));
            let pyr = FlowPyramid {
                flows: vec![t.constant(coarse.clone()), x[0]],
                occlusions: vec![occ0, t.constant(occ.clone())],
            };
            let terms = motion_terms(&pyr, t.constant(src.clone()), t.constant(tgt.clone()), fx, true).unwrap();
            motion_loss(w, &terms)
        })
    }))
}

pub fn cross_entropy_grad(instances: usize) -> f64 {
    worst((0..instances).map(|k| {
        let mut r = rng(1300 + k as u64);
        let logits = normal(&[1, 25, S, S], &mut r);
        let labels: Vec<u8> = (0..S * S).map(|_| r.random_range(0..25)).collect();
        check_each(&[logits], |x| cross_entropy(x[0], &labels).unwrap())
    }))
}

pub fn iuv(instances: usize) -> f64 {
    let w = LossConfig::default();
    worst((0..instances).map(|k| {
        let mut r = rng(1400 + k as u64);
        let u = uniform(&[1, 24, S, S], 0.05, 0.95, &mut r);
        let v = uniform(&[1, 24, S, S], 0.05, 0.95, &mut r);
        let logits = normal(&[1, 25, S, S], &mut r);
        let labels: Vec<u8> = (0..S * S).map(|_| r.random_range(0..25)).collect();
        let gt = onehot_from(&labels, &mut r);
        let w = &w;
        check_each(&[u, v, logits], move |x| {
            let score = softmax_parts(x[2]).unwrap();
            let pred = TranslatedIuv { u: x[0], v: x[1], score, logits: x[2] };
            iuv_loss(&pred, x[0].tape().constant(gt.clone()), &labels, w).unwrap().total
        })
    }))
}

/// 73-channel one-hot encoding of labels with random in-part coordinates.
fn onehot_from(labels: &[u8], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let hw = labels.len();
    let mut t = Tensor::zeros(&[1, 73, S, S]);
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            let k = l as usize - 1;
            t.data_mut()[k * hw + i] = r.random_range(0.0..1.0);
            t.data_mut()[(24 + k) * hw + i] = r.random_range(0.0..1.0);
        }
        t.data_mut()[(48 + l as usize) * hw + i] = 1.0;
    }
    t
}

pub fn reconstruction(instances: usize) -> f64 {
    let fx = RandomConvFeatures::default();
    let w = LossConfig::default();
    worst((0..instances).map(|k| {
        let mut r = rng(1500 + k as u64);
        let pred = uniform(&[1, 3, S, S], 0.0, 1.0, &mut r);
        let gt = uniform(&[1, 3, S, S], 0.0, 1.0, &mut r);
        let (fx, w) = (&fx, &w);
        check_each(&[pred], move |x| pyramid_perceptual_rec(x[0], x[0].tape().constant(gt.clone()), fx, w).unwrap())
    }))
}

pub fn mask(instances: usize) -> f64 {
    worst((0..instances).map(|k| {
        let mut r = rng(1600 + k as u64);
        let pred = uniform(&[1, 1, S, S], 0.05, 0.95, &mut r);
        let gt = uniform(&[1, 1, S, S], 0.0, 1.0, &mut r);
        check_each(&[pred, gt], |x| mask_bce(x[0], x[1]).unwrap())
    }))
}

pub fn lsgan(instances: usize) -> f64 {
    worst((0..instances).map(|k| {
        let mut r = rng(1700 + k as u64);
        let real = normal(&[1, 1, S, S], &mut r);
        let fake = normal(&[1, 1, S, S], &mut r);
        let d = check_each(&[real, fake.clone()], |x| lsgan_d_loss(x[0], x[1]));
        let g = check_each(&[fake], |x| lsgan_g_loss(x[0]));
        d.max(g)
    }))
}

/// Every check with its name.
type Instance = fn(usize) -> f64;

pub fn all(instances: usize) -> Vec<(&'static str, f64)> {
    let checks: [(&str, Instance); 17] = [
        ("bilinear_sample", bilinear),
        ("warp_fuse", warp_fuse_grad),
        ("sample_atlas", sample_atlas_grad),
        ("fuse_parts", fuse_parts_grad),
        ("blend", blend_grad),
        ("softmax_parts", softmax_parts_grad),
        ("tv_loss", tv),
        ("consistency_loss", consistency),
        ("cosine_distance", cosine),
        ("perceptual_correctness", correctness),
        ("affine_reg", affine),
        ("motion_loss", motion),
        ("cross_entropy", cross_entropy_grad),
        ("iuv_loss", iuv),
        ("pyramid_perceptual_rec", reconstruction),
        ("mask_bce", mask),
        ("lsgan", lsgan),
    ];
    checks.iter().map(|&(n, f)| (n, f(instances))).collect()
}
