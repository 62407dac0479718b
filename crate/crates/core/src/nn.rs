//! Parameterized layers. Each layer registers its tensors in a
//! [`ParamStore`] under a dotted name and a group used for freezing.

use mtr_tensor::{Conv2dSpec, ParamId, ParamStore, Scalar, Session, Tensor, Var};
use rand::Rng;

pub const LEAK: f64 = 0.2;

fn he<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Tensor<T> {
    Tensor::<f64>::randn(shape, gain * (2.0 / fan_in as f64).sqrt(), rng).cast()
}

#[derive(Debug, Clone)]
pub struct Conv {
    weight: ParamId,
    bias: ParamId,
    spec: Conv2dSpec,
    pub cin: usize,
    pub cout: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        Self::with_gain(store, name, group, cin, cout, k, stride, 1.0, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_gain<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), group, he(&[cout, cin, k, k], cin * k * k, gain, rng));
        let bias = store.add(format!("{name}.bias"), group, Tensor::zeros(&[cout]));
        Self { weight, bias, spec: Conv2dSpec { stride, padding: k / 2 }, cin, cout }
    }

    /// Zero weights and bias: the layer initially outputs 0.
    #[allow(clippy::too_many_arguments)]
    pub fn zeroed<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), group, Tensor::zeros(&[cout, cin, k, k]));
        let bias = store.add(format!("{name}.bias"), group, Tensor::zeros(&[cout]));
        Self { weight, bias, spec: Conv2dSpec { stride: 1, padding: k / 2 }, cin, cout }
    }

    pub fn forward<'t, T: Scalar>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.conv2d(s.param(self.weight), Some(s.param(self.bias)), self.spec)
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: &str,
        din: usize,
        dout: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), group, he(&[dout, din], din, gain, rng));
        let bias = store.add(format!("{name}.bias"), group, Tensor::zeros(&[dout]));
        Self { weight, bias }
    }

    pub fn forward<'t, T: Scalar>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.linear(s.param(self.weight), Some(s.param(self.bias)))
    }
}

/// `x + conv(lrelu(conv(lrelu(x))))` at constant width.
#[derive(Debug, Clone)]
pub struct ResBlock {
    c1: Conv,
    c2: Conv,
}

impl ResBlock {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, group: &str, c: usize, rng: &mut R) -> Self {
        Self {
            c1: Conv::new(store, &format!("{name}.conv1"), group, c, c, 3, 1, rng),
            c2: Conv::with_gain(store, &format!("{name}.conv2"), group, c, c, 3, 1, 0.5, rng),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let h = self.c1.forward(s, x.leaky_relu(LEAK));
        x + self.c2.forward(s, h.leaky_relu(LEAK))
    }
}

/// Residual block whose activations are modulated per channel by an affine
/// map of a conditioning vector: `h * (1 + gamma(cond)) + beta(cond)`.
#[derive(Debug, Clone)]
pub struct ModResBlock {
    c1: Conv,
    c2: Conv,
    film: Linear,
    channels: usize,
}

impl ModResBlock {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: &str,
        c: usize,
        cond: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            c1: Conv::new(store, &format!("{name}.conv1"), group, c, c, 3, 1, rng),
            c2: Conv::with_gain(store, &format!("{name}.conv2"), group, c, c, 3, 1, 0.5, rng),
            film: Linear::new(store, &format!("{name}.film"), group, cond, 4 * c, 0.1, rng),
            channels: c,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, s: &Session<'t, T>, x: Var<'t, T>, cond: Var<'t, T>) -> Var<'t, T> {
        let c = self.channels;
        let m = self.film.forward(s, cond);
        let h = x.modulate(m.narrow(1, 0, c), m.narrow(1, c, c)).leaky_relu(LEAK);
        let h = self.c1.forward(s, h);
        let h = h.modulate(m.narrow(1, 2 * c, c), m.narrow(1, 3 * c, c)).leaky_relu(LEAK);
        x + self.c2.forward(s, h)
    }
}

/// Nearest 2x upsampling followed by a conv and activation.
#[derive(Debug, Clone)]
pub struct UpBlock {
    conv: Conv,
}

impl UpBlock {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        Self { conv: Conv::new(store, &format!("{name}.conv"), group, cin, cout, 3, 1, rng) }
    }

    pub fn forward<'t, T: Scalar>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        self.conv.forward(s, x.upsample_nearest(2)).leaky_relu(LEAK)
    }
}
