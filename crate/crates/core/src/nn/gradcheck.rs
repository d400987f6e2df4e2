//! Central finite-difference checks for hand-written backward passes.
//!
//! A scalar probe loss `L = Σ r·f(x)` with a fixed random `r` turns any
//! tensor-valued map into a scalar one; its exact gradient with respect to
//! the output is `r`, so the backward pass under test receives `r` as the
//! upstream gradient. The comparison is norm-wise:
//! `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.

use alloc::vec::Vec;
use rand::Rng as _;

use super::param::Param;
use super::tensor::Tensor4;
use crate::rng::Rng;

/// Perturbation used by every check.
pub const EPS: f32 = 1e-3;
/// Acceptance bound on the norm-wise relative error.
pub const TOLERANCE: f64 = 1e-3;
/// Perturbation for checks through a whole trunk. Rounding of f32
/// activations across a dozen stacked layers makes the difference quotient's
/// noise scale as 1/ε, reaching about 3e-3 relative at `EPS`; at this step the
/// noise drops below the tolerance while kinks are still filtered out.
pub const COMPOSITION_EPS: f32 = 1e-2;

pub fn random_tensor(shape: [usize; 4], rng: &mut Rng) -> Tensor4 {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor4::from_vec(shape, data).expect("shape")
}

/// Random values with magnitude at least `gap`, so kinks at zero sit more
/// than one perturbation away.
pub fn random_tensor_off_zero(shape: [usize; 4], gap: f32, rng: &mut Rng) -> Tensor4 {
    random_tensor(shape, rng).map_values(|v| if v < 0.0 { v - gap } else { v + gap })
}

pub fn probe_loss(y: &Tensor4, probe: &Tensor4) -> f64 {
    y.data()
        .iter()
        .zip(probe.data())
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .sum()
}

pub fn relative_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    let mut diff = 0.0f64;
    let (mut na, mut nn) = (0.0f64, 0.0f64);
    for (&a, &n) in analytic.iter().zip(numeric) {
        let a = f64::from(a);
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    let denom = libm::sqrt(na.max(nn));
    if denom == 0.0 {
        return 0.0;
    }
    libm::sqrt(diff) / denom
}

/// Numeric gradient of a scalar function of a flat parameter vector.
pub fn numeric_gradient(values: &mut [f32], loss: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    numeric_gradient_with(values, EPS, loss)
}

/// [`numeric_gradient`] with an explicit perturbation.
pub fn numeric_gradient_with(
    values: &mut [f32],
    eps: f32,
    mut loss: impl FnMut(&[f32]) -> f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + eps;
        let up = loss(values);
        values[i] = orig - eps;
        let down = loss(values);
        values[i] = orig;
        // Divide by the perturbation actually representable in f32.
        let h = f64::from(orig + eps) - f64::from(orig - eps);
        out.push((up - down) / h);
    }
    out
}

/// Central differences that also record which branch every piecewise op
/// (ReLU, max, absolute value) took. A coordinate whose `±EPS` evaluations
/// disagree with the unperturbed pattern straddles a kink, where the
/// difference quotient does not estimate the derivative; it yields `None`.
pub fn kink_aware_gradient(
    values: &mut [f32],
    eval: impl FnMut(&[f32]) -> (f64, Vec<bool>),
) -> Vec<Option<f64>> {
    kink_aware_gradient_with(values, EPS, eval)
}

/// [`kink_aware_gradient`] with an explicit perturbation.
pub fn kink_aware_gradient_with(
    values: &mut [f32],
    eps: f32,
    mut eval: impl FnMut(&[f32]) -> (f64, Vec<bool>),
) -> Vec<Option<f64>> {
    let (_, base) = eval(values);
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + eps;
        let (up, p_up) = eval(values);
        values[i] = orig - eps;
        let (down, p_down) = eval(values);
        values[i] = orig;
        if p_up != base || p_down != base {
            out.push(None);
            continue;
        }
        let h = f64::from(orig + eps) - f64::from(orig - eps);
        out.push(Some((up - down) / h));
    }
    out
}

/// Outcome of a kink-aware comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinkAwareError {
    /// Norm-wise relative error over the coordinates that were checked.
    pub error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl KinkAwareError {
    /// Within tolerance, with at least a quarter of the coordinates free of
    /// kinks so the comparison is not vacuous.
    pub fn passes(&self) -> bool {
        self.error < TOLERANCE && self.checked > 0 && 3 * self.checked >= self.skipped
    }
}

pub fn kink_aware_error(analytic: &[f32], numeric: &[Option<f64>]) -> KinkAwareError {
    let (mut a, mut n) = (Vec::new(), Vec::new());
    for (&x, y) in analytic.iter().zip(numeric) {
        if let Some(y) = y {
            a.push(x);
            n.push(*y);
        }
    }
    KinkAwareError {
        error: relative_error(&a, &n),
        checked: a.len(),
        skipped: numeric.len() - a.len(),
    }
}

/// Relative error of an input gradient.
pub fn input_grad_error(
    x: &Tensor4,
    probe: &Tensor4,
    forward: impl Fn(&Tensor4) -> Tensor4,
    backward: impl Fn(&Tensor4, &Tensor4) -> Tensor4,
) -> f64 {
    let analytic = backward(x, probe);
    let mut work = x.clone();
    let shape = x.shape();
    let numeric = numeric_gradient(work.data_mut(), |vals| {
        let t = Tensor4::from_vec(shape, vals.to_vec()).expect("shape");
        probe_loss(&forward(&t), probe)
    });
    relative_error(analytic.data(), &numeric)
}

/// Relative error of the gradient accumulated into one parameter.
pub fn param_grad_error<M>(
    module: &mut M,
    probe: &Tensor4,
    select: impl Fn(&mut M) -> &mut Param,
    forward: impl Fn(&M) -> Tensor4,
    backward: impl Fn(&mut M, &Tensor4),
) -> f64 {
    select(module).zero_grad();
    backward(module, probe);
    let analytic = select(module).grad().to_vec();
    let mut values = select(module).value.data().to_vec();
    let numeric = numeric_gradient(&mut values, |vals| {
        select(module).value.data_mut().copy_from_slice(vals);

        probe_loss(&forward(module), probe)
    });
    select(module).value.data_mut().copy_from_slice(&values);
    relative_error(&analytic, &numeric)
}

pub fn check_input_grad(
    x: &Tensor4,
    probe: &Tensor4,
    forward: impl Fn(&Tensor4) -> Tensor4,
    backward: impl Fn(&Tensor4, &Tensor4) -> Tensor4,
) {
    let e = input_grad_error(x, probe, forward, backward);
    assert!(e < TOLERANCE, "input gradient relative error {e}");
}

pub fn check_param_grad<M>(
    module: &mut M,
    probe: &Tensor4,
    select: impl Fn(&mut M) -> &mut Param,
    forward: impl Fn(&M) -> Tensor4,
    backward: impl Fn(&mut M, &Tensor4),
) {
    let e = param_grad_error(module, probe, select, forward, backward);
    assert!(e < TOLERANCE, "parameter gradient relative error {e}");
}
