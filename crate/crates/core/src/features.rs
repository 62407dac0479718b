//! Fixed perceptual feature extractors.

use mtr_tensor::{Conv2dSpec, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::LEAK;

/// Deterministic, non-trainable multi-layer feature function with declared
/// layer taps. Taps are ordered from the input resolution downwards.
pub trait FeatureExtractor {
    fn taps<'t, T: Scalar>(&self, img: Var<'t, T>) -> Vec<Var<'t, T>>;
}

/// Seeded random convolution stack `3 -> 8 -> 16 -> 32` with 2x average
/// pooling between layers; each layer output is a tap. Stands in for a
/// pretrained perceptual network.
#[derive(Debug, Clone)]
pub struct RandomConvFeatures {
    layers: Vec<(Tensor<f64>, Tensor<f64>)>,
}

impl RandomConvFeatures {
    pub const DEFAULT_SEED: u64 = 0x005e_edf1;

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [3, 8, 16, 32];
        let layers = widths
            .windows(2)
            .map(|p| {
                let (cin, cout) = (p[0], p[1]);
                let w = Tensor::<f64>::randn(&[cout, cin, 3, 3], (2.0 / (9 * cin) as f64).sqrt(), &mut rng);
                let b = Tensor::<f64>::randn(&[cout], 0.1, &mut rng);
                (w, b)
            })
            .collect();
        Self { layers }
    }

    pub fn num_taps(&self) -> usize {
        self.layers.len()
    }
}

impl Default for RandomConvFeatures {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED)
    }
}

impl FeatureExtractor for RandomConvFeatures {
    fn taps<'t, T: Scalar>(&self, img: Var<'t, T>) -> Vec<Var<'t, T>> {
        let tape = img.tape();
        let spec = Conv2dSpec { stride: 1, padding: 1 };
        let mut x = img.shift(-0.5);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, (w, b)) in self.layers.iter().enumerate() {
            if i > 0 {
                let (_, _, h, wd) = x.dims4();
                if h % 2 != 0 || wd % 2 != 0 || h < 2 || wd < 2 {
                    break;
                }
                x = x.avg_pool(2);
            }
            x = x.conv2d(tape.constant(w.cast()), Some(tape.constant(b.cast())), spec).leaky_relu(LEAK);
            out.push(x);
        }
        out
    }
}
