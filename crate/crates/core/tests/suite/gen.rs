//! Random instance generators.

use mtr_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

pub fn normal(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, r)
}

/// Texel position in `[-0.5, size - 0.5]` at least `margin` away from every
/// integer, so bilinear kinks (texel lines and the clamp border) are never
/// within a finite-difference step.
pub fn smooth_position(size: usize, margin: f64, r: &mut ChaCha8Rng) -> f64 {
    loop {
        let p: f64 = r.random_range(-0.5..size as f64 - 0.5);
        if (p - p.round()).abs() >= margin {
            return p;
        }
    }
}

fn to_normalized(p: f64, size: usize) -> f64 {
    2.0 * p / (size - 1) as f64 - 1.0
}

/// `[n, 2, h, w]` sampling grid into an `sh x sw` source, away from kinks.
pub fn smooth_grid(n: usize, h: usize, w: usize, sh: usize, sw: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let hw = h * w;
    let mut data = vec![0.0; n * 2 * hw];
    for b in 0..n {
        for i in 0..hw {
            data[(b * 2) * hw + i] = to_normalized(smooth_position(sw, 0.02, r), sw);
            data[(b * 2 + 1) * hw + i] = to_normalized(smooth_position(sh, 0.02, r), sh);
        }
    }
    Tensor::new(&[n, 2, h, w], data).unwrap()
}

/// Flow whose warp positions `identity + flow` avoid kinks.
pub fn smooth_flow(n: usize, h: usize, w: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let grid = smooth_grid(n, h, w, h, w, r);
    let id = mtr_core::sampling::identity_grid::<f64>(n, h, w);
    Tensor::new(grid.shape(), grid.data().iter().zip(id.data()).map(|(g, i)| g - i).collect()).unwrap()
}

/// `[n, parts, h, w]` atlas coordinates in `[0, 1]` whose texel positions
/// along an axis of `size` texels avoid kinks.
pub fn smooth_uv(n: usize, parts: usize, h: usize, w: usize, size: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(&[n, parts, h, w], |_| (smooth_position(size, 0.02, r) / (size - 1) as f64).clamp(-0.2, 1.2))
}

/// Per-pixel probability vectors over `c` channels.
pub fn simplex(n: usize, c: usize, h: usize, w: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = uniform(&[n, c, h, w], 0.05, 1.0, r);
    let hw = h * w;
    for b in 0..n {
        for i in 0..hw {
            let s: f64 = (0..c).map(|k| t.data()[(b * c + k) * hw + i]).sum();
            for k in 0..c {
                t.data_mut()[(b * c + k) * hw + i] /= s;
            }
        }
    }
    t
}

/// Values bounded away from zero: `|x| in [0.1, 1]` with a random sign.
pub fn nonzero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m: f64 = r.random_range(0.1..1.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}
