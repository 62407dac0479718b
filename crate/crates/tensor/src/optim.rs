use std::collections::BTreeMap;

use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam over an explicit set of parameters. Parameters outside the set are
/// never touched.
pub struct Adam<T> {
    cfg: AdamConfig,
    step: u64,
    state: BTreeMap<ParamId, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: impl IntoIterator<Item = ParamId>, store: &ParamStore<T>) -> Self {
        let state = params
            .into_iter()
            .map(|id| {
                let n = store.get(id).numel();
                (id, (vec![T::zero(); n], vec![T::zero(); n]))
            })
            .collect();
        Self { cfg, step: 0, state }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn owns(&self, id: ParamId) -> bool {
        self.state.contains_key(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.state.keys().copied()
    }

    /// One update. Gradients for parameters outside the set are ignored.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) {
        self.step += 1;
        let t = self.step as f64;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let step_size = T::lit(c.lr * bc2.sqrt() / bc1);
        let eps = T::lit(c.eps * bc2.sqrt());
        for (id, g) in grads {
            let Some((m, v)) = self.state.get_mut(id) else { continue };
            let p = store.get_mut(*id);
            for (((p, m), v), &g) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() + eps);
            }
        }
    }
}
