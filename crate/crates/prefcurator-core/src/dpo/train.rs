//! Minimal DPO trainer: plain gradient descent, one pair per step, in the
//! given order. Order sensitivity is deliberate; it is how curriculum
//! curation takes effect.

use serde::{Deserialize, Serialize};

use super::features::EncodedPair;
use super::loss::{dpo_gradient, dpo_loss};
use super::policy::ToyPolicy;
use super::DpoError;
use crate::scalar::Real;

/// Trainer configuration. The beta and learning-rate defaults follow the
/// reference full-scale recipe; toy instances usually need a larger rate,
/// so pass one explicitly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub epochs: u32,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.01,
            learning_rate: 3e-7,
            warmup_fraction: 0.1,
            epochs: 1,
            seed: 0,
        }
    }
}

impl DpoConfig {
    fn validate(&self) -> Result<(), DpoError> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(DpoError::InvalidBeta(self.beta));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(DpoError::InvalidConfig {
                reason: format!("learning_rate {} must be positive", self.learning_rate),
            });
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(DpoError::InvalidConfig {
                reason: format!("warmup_fraction {} outside [0, 1]", self.warmup_fraction),
            });
        }
        Ok(())
    }
}

/// One trace row; mirrors the `step,loss,mean_margin` CSV schema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow<T> {
    pub step: usize,
    pub loss: T,
    pub mean_margin: T,
}

pub struct TrainOutcome<T: Real> {
    pub policy: ToyPolicy<T>,
    pub trace: Vec<TraceRow<T>>,
}

/// Trainer failure. Non-finite losses abort but hand back the trace up to
/// the failing step.
#[derive(Debug, thiserror::Error)]
pub enum TrainError<T: Real> {
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize, trace: Vec<TraceRow<T>> },
    #[error(transparent)]
    Dpo(#[from] DpoError),
}

/// Gradient descent with linear warmup over the first `warmup_fraction` of
/// steps, then a constant rate. One pair per step, `epochs` passes over the
/// pairs in their given order. Deterministic: no internal shuffling.
pub fn train<T: Real>(
    policy_init: ToyPolicy<T>,
    reference: &ToyPolicy<T>,
    curated_pairs: &[EncodedPair],
    config: &DpoConfig,
) -> Result<TrainOutcome<T>, TrainError<T>> {
    config.validate()?;
    policy_init.check_compatible(reference)?;
    let beta = T::from_f64_lossy(config.beta);
    let lr = T::from_f64_lossy(config.learning_rate);

    let total_steps = curated_pairs.len() * config.epochs as usize;
    let warmup_steps = (config.warmup_fraction * total_steps as f64).ceil() as usize;

    let mut policy = policy_init;
    let mut trace = Vec::with_capacity(total_steps);
    let mut step = 0usize;
    for _ in 0..config.epochs {
        for pair in curated_pairs {
            let batch = std::slice::from_ref(pair);
            let (loss, stats) = dpo_loss(&policy, reference, batch, beta)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { step, trace });
            }
            trace.push(TraceRow {
                step,
                loss,
                mean_margin: stats.mean,
            });
            let grad = dpo_gradient(&policy, reference, batch, beta)?;
            let rate = if step < warmup_steps {
                lr * T::from_usize_lossy(step + 1) / T::from_usize_lossy(warmup_steps)
            } else {
                lr
            };
            for (t, g) in policy.theta_mut().iter_mut().zip(grad) {
                *t = *t - rate * g;
            }
            step += 1;
        }
    }
    Ok(TrainOutcome { policy, trace })
}

/// Fraction of held-out pairs whose margin is strictly positive under the
/// policy. Ties count as incorrect.
pub fn eval_preference_accuracy<T: Real>(
    policy: &ToyPolicy<T>,
    reference: &ToyPolicy<T>,
    heldout_pairs: &[EncodedPair],
    beta: f64,
) -> Result<f64, DpoError> {
    if heldout_pairs.is_empty() {
        return Err(DpoError::EmptySet);
    }
    policy.check_compatible(reference)?;
    let beta = T::from_f64_lossy(beta);
    let mut correct = 0usize;
    for pair in heldout_pairs {
        let (_, stats) = dpo_loss(policy, reference, std::slice::from_ref(pair), beta)?;
        if stats.mean > T::zero() {
            correct += 1;
        }
    }
    Ok(correct as f64 / heldout_pairs.len() as f64)
}

/// Renders a loss trace in the `step,loss,mean_margin` CSV schema.
pub fn trace_to_csv<T: Real>(trace: &[TraceRow<T>]) -> String {
    let mut out = String::from("step,loss,mean_margin\n");
    for row in trace {
        out.push_str(&format!("{},{},{}\n", row.step, row.loss, row.mean_margin));
    }
    out
}
