//! Library results against the brute-force oracles on randomized instances.
//! Each check is a property over `cases` generated instances and returns the
//! first counterexample as an error.

use mtr_core::losses::{affine_reg_window, consistency_loss, lsgan_d_loss, lsgan_g_loss, tv_loss};
use mtr_core::metrics::{aed_embeddings, akd, fid_embeddings, l1_metric, mkr, FID_EPS};
use mtr_core::parts::softmax_parts;
use mtr_core::sampling::bilinear_sample;
use mtr_core::texture::{fuse_parts, sample_atlas};
use mtr_core::types::{Image, Keypoint};
use mtr_core::warp::warp_fuse;
use mtr_tensor::{Tape, Tensor};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng;

use super::gen::{normal, rng, simplex, uniform};
use super::oracles as o;

pub const TOLERANCE: f64 = 1e-6;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn close(name: &str, got: &[f64], want: &[f64]) -> Result<(), TestCaseError> {
    if got.len() != want.len() {
        return Err(TestCaseError::fail(format!("{name}: {} values, oracle has {}", got.len(), want.len())));
    }
    let worst = got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if worst <= TOLERANCE {
        Ok(())
    } else {
        Err(TestCaseError::fail(format!("{name}: max deviation {worst:e} from oracle")))
    }
}

fn dims() -> impl Strategy<Value = (u64, usize, usize, usize, usize)> {
    (any::<u64>(), 1usize..3, 1usize..4, 1usize..7, 1usize..7)
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

pub fn bilinear(cases: u32) -> Result<(), String> {
    run(cases, (dims(), 1usize..6, 1usize..6), |((seed, n, c, h, w), ha, wa)| {
        let mut r = rng(seed);
        let src = normal(&[n, c, ha, wa], &mut r);
        let grid = uniform(&[n, 2, h, w], -1.3, 1.3, &mut r);
        let tape = Tape::new();
        let out = bilinear_sample(tape.constant(src.clone()), tape.constant(grid.clone())).unwrap();
        close("bilinear_sample", out.value().data(), &o::bilinear(src.data(), [n, c, ha, wa], grid.data(), h, w))
    })
}

pub fn warp_fuse_oracle(cases: u32) -> Result<(), String> {
    run(cases, dims(), |(seed, n, c, h, w)| {
        let mut r = rng(seed);
        let z = normal(&[n, c, h, w], &mut r);
        let flow = uniform(&[n, 2, h, w], -0.8, 0.8, &mut r);
        let occ = uniform(&[n, 1, h, w], 0.0, 1.0, &mut r);
        let prev = normal(&[n, c, h, w], &mut r);
        let t = Tape::new();
        let out = warp_fuse(
            t.constant(z.clone()),
            t.constant(flow.clone()),
            t.constant(occ.clone()),
            t.constant(prev.clone()),
        )
        .unwrap();
        close(
            "warp_fuse",
            out.value().data(),
            &o::warp_fuse(z.data(), [n, c, h, w], flow.data(), occ.data(), prev.data()),
        )
    })
}

pub fn sample_atlas_oracle(cases: u32) -> Result<(), String> {
    run(cases, (dims(), 1usize..6), |((seed, n, c, h, w), res)| {
        let mut r = rng(seed);
        let atlas = normal(&[n, 24 * c, res, res], &mut r);
        let u = uniform(&[n, 24, h, w], -0.1, 1.1, &mut r);
        let v = uniform(&[n, 24, h, w], -0.1, 1.1, &mut r);
        let t = Tape::new();
        let parts = sample_atlas(t.constant(atlas.clone()), t.constant(u.clone()), t.constant(v.clone()), c).unwrap();
        let want = o::sample_atlas(atlas.data(), [n, 24 * c, res, res], c, u.data(), v.data(), h, w);
        for (k, (p, q)) in parts.iter().zip(&want).enumerate() {
            close(&format!("sample_atlas part {k}"), p.value().data(), q)?;
        }
        Ok(())
    })
}

pub fn fuse_parts_oracle(cases: u32) -> Result<(), String> {
    run(cases, dims(), |(seed, n, c, h, w)| {
        let mut r = rng(seed);
        let parts: Vec<Tensor<f64>> = (0..24).map(|_| normal(&[n, c, h, w], &mut r)).collect();
        let score = simplex(n, 25, h, w, &mut r);
        let t = Tape::new();
        let vars: Vec<_> = parts.iter().map(|p| t.constant(p.clone())).collect();
        let out = fuse_parts(&vars, t.constant(score.clone())).unwrap();
        let raw: Vec<Vec<f64>> = parts.iter().map(|p| p.data().to_vec()).collect();
        close("fuse_parts", out.value().data(), &o::fuse_parts(&raw, [n, c, h, w], score.data()))
    })
}

pub fn softmax_oracle(cases: u32) -> Result<(), String> {
    run(cases, dims(), |(seed, n, _, h, w)| {
        let logits = normal(&[n, 25, h, w], &mut rng(seed)).map(|v| 4.0 * v);
        let t = Tape::new();
        let out = softmax_parts(t.constant(logits.clone())).unwrap();
        close("softmax_parts", out.value().data(), &o::softmax(logits.data(), [n, 25, h, w]))
    })
}

pub fn lsgan_oracle(cases: u32) -> Result<(), String> {
    run(cases, dims(), |(seed, n, _, h, w)| {
        let mut r = rng(seed);
        let real = normal(&[n, 1, h, w], &mut r);
        let fake = normal(&[n, 1, h, w], &mut r);
        let t = Tape::new();
        let d = lsgan_d_loss(t.constant(real.clone()), t.constant(fake.clone())).item();
        let g = lsgan_g_loss(t.constant(fake.clone())).item();
        close("lsgan", &[d, g], &[o::lsgan_d(real.data(), fake.data()), o::lsgan_g(fake.data())])
    })
}

pub fn tv_oracle(cases: u32) -> Result<(), String> {
    run(cases, dims(), |(seed, n, c, h, w)| {
        prop_assume!(h * w > 1);
        let f = normal(&[n, c, h, w], &mut rng(seed));
        let t = Tape::new();
        close("tv_loss", &[tv_loss(t.constant(f.clone())).item()], &[o::tv(f.data(), [n, c, h, w])])
    })
}

pub fn consistency_oracle(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 1usize..3, 2usize..4, 1usize..4), |(seed, n, levels, base)| {
        let mut r = rng(seed);
        let flows: Vec<(Vec<f64>, o::Dims)> = (0..levels)
            .map(|l| {
                let s = base << l;
                (normal(&[n, 2, s, s], &mut r).data().to_vec(), [n, 2, s, s])
            })
            .collect();
        let t = Tape::new();
        let vars: Vec<_> = flows.iter().map(|(f, d)| t.constant(Tensor::new(d, f.clone()).unwrap())).collect();
        close("consistency_loss", &[consistency_loss(&vars).unwrap().item()], &[o::consistency(&flows)])
    })
}

pub fn affine_oracle(cases: u32) -> Result<(), String> {
    run(cases, (dims(), prop_oneof![Just(3usize), Just(5usize)]), |((seed, n, c, h, w), k)| {
        let (h, w) = (h + 2, w + 2);
        let f = normal(&[n, c, h, w], &mut rng(seed));
        let t = Tape::new();
        let got = affine_reg_window(t.constant(f.clone()), k).item();
        close("affine_reg", &[got], &[o::affine_reg(f.data(), [n, c, h, w], k)])
    })
}

pub fn l1_oracle(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 1usize..9, 1usize..9), |(seed, h, w)| {
        let mut r = rng(seed);
        let a = Image::new(uniform(&[3, h, w], 0.0, 1.0, &mut r).cast()).unwrap();
        let b = Image::new(uniform(&[3, h, w], 0.0, 1.0, &mut r).cast()).unwrap();
        let as64 = |i: &Image| i.tensor().data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        close("l1_metric", &[l1_metric(&a, &b).unwrap()], &[o::l1(&as64(&a), &as64(&b))])
    })
}

pub fn aed_oracle(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 1usize..6, 1usize..9), |(seed, frames, d)| {
        let mut r = rng(seed);
        let pred: Vec<Vec<f64>> = (0..frames).map(|_| normal(&[d], &mut r).data().to_vec()).collect();
        let reference = normal(&[d], &mut r).data().to_vec();
        close("aed", &[aed_embeddings(&pred, &reference).unwrap()], &[o::aed(&pred, &reference)])
    })
}

fn random_kps(frames: usize, joints: usize, r: &mut rand_chacha::ChaCha8Rng) -> Vec<Vec<o::Kp>> {
    (0..frames)
        .map(|_| {
            (0..joints).map(|_| (r.random_range(0.0..64.0), r.random_range(0.0..64.0), r.random_bool(0.7))).collect()
        })
        .collect()
}

fn to_sets(kps: &[Vec<o::Kp>]) -> Vec<Vec<Keypoint>> {
    kps.iter()
        .map(|f| {
            f.iter()
                .map(
                    |&(x, y, p)| {
                        if p {
                            Keypoint { x: x as f32, y: y as f32, present: true }
                        } else {
                            Keypoint::MISSING
                        }
                    },
                )
                .collect()
        })
        .collect()
}

/// Keypoint coordinates are stored as `f32`; the oracle sees the same values.
fn rounded(kps: &[Vec<o::Kp>]) -> Vec<Vec<o::Kp>> {
    kps.iter().map(|f| f.iter().map(|&(x, y, p)| (x as f32 as f64, y as f32 as f64, p)).collect()).collect()
}

pub fn keypoint_oracles(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 1usize..5, 1usize..9), |(seed, frames, joints)| {
        let mut r = rng(seed);
        let (p, g) = (rounded(&random_kps(frames, joints, &mut r)), rounded(&random_kps(frames, joints, &mut r)));
        let (ps, gs) = (to_sets(&p), to_sets(&g));
        close("akd", &[akd(&ps, &gs).unwrap()], &[o::akd(&p, &g)])?;
        close("mkr", &[mkr(&ps, &gs).unwrap()], &[o::mkr(&p, &g)])
    })
}

pub fn fid_oracle(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 1usize..5, 0usize..20, 0usize..20), |(seed, d, na, nb)| {
        let mut r = rng(seed);
        let (na, nb) = (d + 2 + na, d + 2 + nb);
        let shift: f64 = r.random_range(-1.0..1.0);
        let a: Vec<Vec<f64>> = (0..na).map(|_| normal(&[d], &mut r).data().to_vec()).collect();
        let b: Vec<Vec<f64>> =
            (0..nb).map(|_| normal(&[d], &mut r).data().iter().map(|v| 1.5 * v + shift).collect()).collect();
        close("fid", &[fid_embeddings(&a, &b).unwrap()], &[o::fid(&a, &b, FID_EPS)])
    })
}

/// Every property with its name.
type Property = fn(u32) -> Result<(), String>;

pub fn all(cases: u32) -> Vec<(&'static str, Result<(), String>)> {
    let checks: [(&str, Property); 14] = [
        ("bilinear_sample", bilinear),
        ("warp_fuse", warp_fuse_oracle),
        ("sample_atlas", sample_atlas_oracle),
        ("fuse_parts", fuse_parts_oracle),
        ("softmax_parts", softmax_oracle),
        ("lsgan", lsgan_oracle),
        ("tv_loss", tv_oracle),
        ("consistency_loss", consistency_oracle),
        ("affine_reg", affine_oracle),
        ("l1_metric", l1_oracle),
        ("aed", aed_oracle),
        ("akd_mkr", keypoint_oracles),
        ("fid", fid_oracle),
        ("metric_triangle", triangle),
    ];
    checks.iter().map(|&(n, f)| (n, f(cases))).collect()
}

/// L1 and AED obey the triangle inequality and are non-negative.
pub fn triangle(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 1usize..6, 1usize..6), |(seed, h, w)| {
        let mut r = rng(seed);
        let imgs: Vec<Image> =
            (0..3).map(|_| Image::new(uniform(&[3, h, w], 0.0, 1.0, &mut r).cast()).unwrap()).collect();
        let l = |i: usize, j: usize| l1_metric(&imgs[i], &imgs[j]).unwrap();
        prop_assert!(l(0, 1) >= 0.0);
        prop_assert!(l(0, 2) <= l(0, 1) + l(1, 2) + 1e-12);
        let e: Vec<Vec<f64>> = (0..3).map(|_| normal(&[4], &mut r).data().to_vec()).collect();
        let a = |i: usize, j: usize| aed_embeddings(&e[i..=i], &e[j]).unwrap();
        prop_assert!(a(0, 2) <= a(0, 1) + a(1, 2) + 1e-12);
        Ok(())
    })
}
