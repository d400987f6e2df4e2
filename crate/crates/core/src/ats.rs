//! Attentive training strategy: per-sample loss re-weighting and the
//! two-step round schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::loss::{bce_backward, bce_per_sample};
use crate::nn::Tensor4;

/// Phase of a training round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    /// Uniform weights.
    One,
    /// Weights `1 − softmax(l)`, down-weighting the hardest samples.
    Two,
}

impl Step {
    pub fn index(self) -> u8 {
        match self {
            Step::One => 1,
            Step::Two => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentiveWeights {
    pub alpha: Vec<f64>,
    pub step: Step,
}

impl AttentiveWeights {
    pub fn uniform(n: usize) -> Self {
        Self {
            alpha: vec![1.0; n],
            step: Step::One,
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Per-sample weights for a mini-batch. Step two computes
/// `α_n = Σ_{i≠n} e^{l_i} / Σ_i e^{l_i}` as `1 − softmax(l)_n` with the
/// maximum subtracted first.
pub fn attentive_weights(losses: &[f32], step: Step) -> Result<AttentiveWeights> {
    if losses.is_empty() {
        return Err(Error::InvalidParameter(
            "attentive weights need at least one loss".into(),
        ));
    }
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFinite(format!("loss of batch sample {i}")));
    }
    let alpha = match step {
        Step::One => vec![1.0; losses.len()],
        Step::Two => {
            let mx = losses.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let e: Vec<f64> = losses
                .iter()
                .map(|&l| libm::exp(f64::from(l - mx)))
                .collect();
            let z: f64 = e.iter().sum();
            // Σ_{i≠n} e_i / z, summed directly rather than as 1 − e_n/z so
            // that a dominant sample's weight does not cancel to zero.
            e.iter().map(|&en| (z - en) / z).collect()
        }
    };
    Ok(AttentiveWeights { alpha, step })
}

/// `Σ α_n l_n / Σ α_n`.
pub fn weighted_mean(losses: &[f32], w: &AttentiveWeights) -> Result<f32> {
    if losses.len() != w.len() {
        return Err(Error::InvalidParameter(format!(
            "{} losses for {} weights",
            losses.len(),
            w.len()
        )));
    }
    let total: f64 = w.alpha.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidParameter(
            "attentive weights sum to zero".into(),
        ));
    }
    let s: f64 = losses
        .iter()
        .zip(&w.alpha)
        .map(|(&l, a)| f64::from(l) * a)
        .sum();
    Ok((s / total) as f32)
}

/// Weighted BCE of a batch with its per-sample losses.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentiveLoss {
    pub value: f32,
    pub per_sample: Vec<f32>,
    pub weights: AttentiveWeights,
}

/// Attentive BCE for fixed weights.
pub fn attentive_bce(preds: &Tensor4, labels: &Tensor4, weights: &AttentiveWeights) -> Result<f32> {
    weighted_mean(&bce_per_sample(preds, labels)?, weights)
}

/// Computes the weights for `step` from the batch's own (detached) losses,
/// the weighted loss, and its gradient with respect to `preds`.
pub fn attentive_bce_with_grad(
    preds: &Tensor4,
    labels: &Tensor4,
    step: Step,
) -> Result<(AttentiveLoss, Tensor4)> {
    let per_sample = bce_per_sample(preds, labels)?;
    let weights = attentive_weights(&per_sample, step)?;
    let value = weighted_mean(&per_sample, &weights)?;
    let total: f64 = weights.alpha.iter().sum();
    let coef: Vec<f32> = weights.alpha.iter().map(|a| (a / total) as f32).collect();
    let grad = bce_backward(preds, labels, &coef)?;
    Ok((
        AttentiveLoss {
            value,
            per_sample,
            weights,
        },
        grad,
    ))
}

/// Rounds of `2τ` epochs: step one for the first `τ`, step two for the
/// rest, with one label update after the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundSchedule {
    pub tau: usize,
    pub rounds: usize,
}

/// Position of one epoch in the schedule (all indices 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochSlot {
    pub round: usize,
    /// Epoch counted from the start of training.
    pub epoch: usize,
    pub step: Step,
    /// True for the last epoch of a round, after which labels update.
    pub update_after: bool,
}

impl RoundSchedule {
    pub fn new(tau: usize, rounds: usize) -> Result<Self> {
        if tau == 0 || rounds == 0 {
            return Err(Error::InvalidParameter(
                "tau and rounds must be positive".into(),
            ));
        }
        Ok(Self { tau, rounds })
    }

    pub fn epochs_per_round(&self) -> usize {
        2 * self.tau
    }

    pub fn total_epochs(&self) -> usize {
        self.rounds * self.epochs_per_round()
    }

    pub fn slot(&self, epoch: usize) -> EpochSlot {
        let within = (epoch - 1) % self.epochs_per_round();
        EpochSlot {
            round: (epoch - 1) / self.epochs_per_round() + 1,
            epoch,
            step: if within < self.tau {
                Step::One
            } else {
                Step::Two
            },
            update_after: within + 1 == self.epochs_per_round(),
        }
    }

    pub fn slots(&self) -> impl Iterator<Item = EpochSlot> + '_ {
        (1..=self.total_epochs()).map(|e| self.slot(e))
    }

    /// Epochs of one round.
    pub fn round_slots(&self, round: usize) -> impl Iterator<Item = EpochSlot> + '_ {
        let start = (round - 1) * self.epochs_per_round() + 1;
        (start..start + self.epochs_per_round()).map(|e| self.slot(e))
    }
}
