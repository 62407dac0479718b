//! Central finite-difference gradient verification (float64).

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Evaluates a scalar function of one tensor input.
pub fn eval<F>(x: &Tensor<f64>, f: &F) -> f64
where
    F: for<'t> Fn(Var<'t, f64>) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let out = f(tape.constant(x.clone()));
    out.item()
}

/// Reverse-mode gradient of `f` at `x`.
pub fn analytic<F>(x: &Tensor<f64>, f: &F) -> Tensor<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let out = f(leaf);
    let grads = tape.backward(out);
    grads.get(leaf).unwrap_or_else(|| Tensor::zeros(x.shape()))
}

/// Central-difference gradient of `f` at `x` with the given step.
pub fn numeric<F>(x: &Tensor<f64>, step: f64, f: &F) -> Tensor<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Var<'t, f64>,
{
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&probe, f);
        probe.data_mut()[i] = orig - step;
        let down = eval(&probe, f);
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Tensor::new(x.shape(), out).expect("same shape")
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm, with a floor so that two
/// vanishing gradients compare as equal.
pub fn relative_error(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let norm = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a.data()).max(norm(b.data())).max(1e-10)
}

/// Relative error between the analytic and numeric gradient.
pub fn check<F>(x: &Tensor<f64>, step: f64, f: F) -> f64
where
    F: for<'t> Fn(Var<'t, f64>) -> Var<'t, f64>,
{
    relative_error(&analytic(x, &f), &numeric(x, step, &f))
}
