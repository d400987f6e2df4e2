//! Per-sample regression and cross-entropy losses with their gradients.

use alloc::vec::Vec;

use super::tensor::Tensor4;
use crate::error::Result;

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f32 = 1e-6;

/// Mean squared error of each sample (averaged over C×H×W).
pub fn mse_per_sample(pred: &Tensor4, target: &Tensor4) -> Result<Vec<f32>> {
    pred.check_same_shape(target, "mse")?;
    Ok((0..pred.n())
        .map(|n| {
            let s: f64 = pred
                .sample(n)
                .iter()
                .zip(target.sample(n))
                .map(|(&p, &t)| {
                    let d = f64::from(p) - f64::from(t);
                    d * d
                })
                .sum();
            (s / pred.sample_len() as f64) as f32
        })
        .collect())
}

/// Mean squared error over the whole tensor.
pub fn mse(pred: &Tensor4, target: &Tensor4) -> Result<f32> {
    let per = mse_per_sample(pred, target)?;
    Ok((per.iter().map(|&v| f64::from(v)).sum::<f64>() / per.len().max(1) as f64) as f32)
}

/// Gradient of `Σ_n coef[n] · mse_n` with respect to `pred`.
pub fn mse_backward(pred: &Tensor4, target: &Tensor4, coef: &[f32]) -> Result<Tensor4> {
    pred.check_same_shape(target, "mse backward")?;
    let mut g = Tensor4::zeros(pred.shape());
    let m = pred.sample_len() as f32;
    for (n, &c) in coef.iter().enumerate().take(pred.n()) {
        let k = 2.0 * c / m;
        for ((o, &p), &t) in g
            .sample_mut(n)
            .iter_mut()
            .zip(pred.sample(n))
            .zip(target.sample(n))
        {
            *o = k * (p - t);
        }
    }
    Ok(g)
}

#[inline]
fn clamp_prob(p: f32) -> f32 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross-entropy of each sample, averaged over its pixels.
pub fn bce_per_sample(pred: &Tensor4, target: &Tensor4) -> Result<Vec<f32>> {
    pred.check_same_shape(target, "bce")?;
    Ok((0..pred.n())
        .map(|n| {
            let s: f64 = pred
                .sample(n)
                .iter()
                .zip(target.sample(n))
                .map(|(&p, &t)| {
                    let p = f64::from(clamp_prob(p));
                    let t = f64::from(t);
                    -(t * libm::log(p) + (1.0 - t) * libm::log(1.0 - p))
                })
                .sum();
            (s / pred.sample_len() as f64) as f32
        })
        .collect())
}

/// Gradient of `Σ_n coef[n] · bce_n` with respect to `pred`; zero where
/// the clamp is active.
pub fn bce_backward(pred: &Tensor4, target: &Tensor4, coef: &[f32]) -> Result<Tensor4> {
    pred.check_same_shape(target, "bce backward")?;
    let mut g = Tensor4::zeros(pred.shape());
    let m = pred.sample_len() as f32;
    for (n, &c) in coef.iter().enumerate().take(pred.n()) {
        let k = c / m;
        for ((o, &p), &t) in g
            .sample_mut(n)
            .iter_mut()
            .zip(pred.sample(n))
            .zip(target.sample(n))
        {
            *o = if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
                0.0
            } else {
                k * (p - t) / (p * (1.0 - p))
            };
        }
    }
    Ok(g)
}
