//! Implicit reward, DPO loss, and its analytic gradient.
//!
//! The implicit reward omits the `beta * log Z(x)` partition term, which
//! cancels in every pairwise margin. All sigmoid/log terms use the stable
//! softplus form so margins beyond +/-30 neither overflow nor round to junk.

use super::features::EncodedPair;
use super::policy::ToyPolicy;
use super::DpoError;
use crate::scalar::Real;

/// `beta * (log pi(y|x) - log pi_ref(y|x))`, the DPO implicit reward up to
/// the context-constant partition term.
pub fn implicit_reward<T: Real>(
    policy: &ToyPolicy<T>,
    reference: &ToyPolicy<T>,
    context: u64,
    response: usize,
    beta: T,
) -> Result<T, DpoError> {
    policy.check_compatible(reference)?;
    check_beta(beta)?;
    let lp = policy.log_prob(context, response)?;
    let lp_ref = reference.log_prob(context, response)?;
    Ok(beta * (lp - lp_ref))
}

/// Margin summary over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginStats<T> {
    pub mean: T,
    pub min: T,
}

/// `softplus(x) = ln(1 + e^x)`, evaluated stably for any magnitude.
pub(crate) fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// `sigmoid(x)` via the stable branch-free exp form.
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn check_beta<T: Real>(beta: T) -> Result<(), DpoError> {
    if !(beta > T::zero()) || !beta.is_finite() {
        return Err(DpoError::InvalidBeta(beta.to_f64_lossy()));
    }
    Ok(())
}

fn margin<T: Real>(
    policy: &ToyPolicy<T>,
    reference: &ToyPolicy<T>,
    pair: &EncodedPair,
    beta: T,
) -> Result<T, DpoError> {
    let rw = implicit_reward(policy, reference, pair.context, pair.winner, beta)?;
    let rl = implicit_reward(policy, reference, pair.context, pair.loser, beta)?;
    Ok(rw - rl)
}

/// Mean `-log sigmoid(margin)` over the batch, plus margin statistics.
pub fn dpo_loss<T: Real>(
    policy: &ToyPolicy<T>,
    reference: &ToyPolicy<T>,
    batch: &[EncodedPair],
    beta: T,
) -> Result<(T, MarginStats<T>), DpoError> {
    if batch.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    let mut total = T::zero();
    let mut margin_sum = T::zero();
    let mut margin_min = T::infinity();
    for pair in batch {
        let z = margin(policy, reference, pair, beta)?;
        total = total + softplus(-z);
        margin_sum = margin_sum + z;
        margin_min = margin_min.min(z);
    }
    let n = T::from_usize_lossy(batch.len());
    Ok((
        total / n,
        MarginStats {
            mean: margin_sum / n,
            min: margin_min,
        },
    ))
}

/// Analytic gradient of [`dpo_loss`] with respect to the policy parameters:
/// `-mean over pairs of sigmoid(-z) * beta * (grad log pi(y_w) - grad log pi(y_l))`.
pub fn dpo_gradient<T: Real>(
    policy: &ToyPolicy<T>,
    reference: &ToyPolicy<T>,
    batch: &[EncodedPair],
    beta: T,
) -> Result<Vec<T>, DpoError> {
    if batch.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    policy.check_compatible(reference)?;
    check_beta(beta)?;
    let mut grad = vec![T::zero(); policy.dim()];
    for pair in batch {
        let z = margin(policy, reference, pair, beta)?;
        let weight = sigmoid(-z) * beta;
        let gw = policy.grad_log_prob(pair.context, pair.winner)?;
        let gl = policy.grad_log_prob(pair.context, pair.loser)?;
        for ((g, w), l) in grad.iter_mut().zip(gw).zip(gl) {
            *g = *g - weight * (w - l);
        }
    }
    let n = T::from_usize_lossy(batch.len());
    for g in grad.iter_mut() {
        *g = *g / n;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpo::features::{HashedFeatures, OneHotFeatures, SharedFeatures};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn hashed(dim: usize, m: usize, seed: u64) -> SharedFeatures<f64> {
        Arc::new(HashedFeatures {
            dim,
            num_responses: m,
            seed,
        })
    }

    fn pair(context: u64, winner: usize, loser: usize) -> EncodedPair {
        EncodedPair {
            context,
            winner,
            loser,
        }
    }

    #[test]
    fn identical_policies_have_zero_implicit_reward() {
        let features = hashed(6, 3, 5);
        let policy =
            ToyPolicy::with_theta(Arc::clone(&features), vec![0.5, -1.0, 0.2, 0.9, -0.3, 1.4])
                .unwrap();
        for context in [0u64, 7, 42] {
            for response in 0..3 {
                let r = implicit_reward(&policy, &policy, context, response, 1.0).unwrap();
                assert_relative_eq!(r, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn implicit_reward_is_linear_in_beta() {
        let features = hashed(4, 3, 8);
        let policy =
            ToyPolicy::with_theta(Arc::clone(&features), vec![1.0, 0.5, -0.5, 0.25]).unwrap();
        let reference = ToyPolicy::new(Arc::clone(&features));
        let r1 = implicit_reward(&policy, &reference, 3, 1, 0.7).unwrap();
        let r2 = implicit_reward(&policy, &reference, 3, 1, 1.4).unwrap();
        assert_relative_eq!(r2, 2.0 * r1, epsilon = 1e-12);
    }

    #[test]
    fn hand_set_logits_reward() {
        // Policy logits [1, 0], reference logits [0, 0], beta = 1:
        // reward(0) = log(e/(e+1)) - log(1/2).
        let features: SharedFeatures<f64> = Arc::new(OneHotFeatures { num_responses: 2 });
        let policy = ToyPolicy::with_theta(Arc::clone(&features), vec![1.0, 0.0]).unwrap();
        let reference = ToyPolicy::with_theta(Arc::clone(&features), vec![0.0, 0.0]).unwrap();
        let r = implicit_reward(&policy, &reference, 0, 0, 1.0).unwrap();
        let e = std::f64::consts::E;
        let expected = (e / (e + 1.0)).ln() - 0.5f64.ln();
        assert_relative_eq!(r, expected, epsilon = 1e-12);
    }

    #[test]
    fn loss_is_ln_two_when_policy_equals_reference() {
        let features = hashed(5, 4, 2);
        let policy =
            ToyPolicy::with_theta(Arc::clone(&features), vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let batch: Vec<EncodedPair> = (0..10).map(|i| pair(i, 0, 1)).collect();
        let (loss, stats) = dpo_loss(&policy, &policy, &batch, 0.01).unwrap();
        assert_relative_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
        assert_relative_eq!(stats.mean, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn saturated_margin_loss_vanishes() {
        // Logits force a margin of 50; -log sigmoid(50) < 1e-20.
        let features: SharedFeatures<f64> = Arc::new(OneHotFeatures { num_responses: 2 });
        let policy = ToyPolicy::with_theta(Arc::clone(&features), vec![50.0, 0.0]).unwrap();
        let reference = ToyPolicy::with_theta(Arc::clone(&features), vec![0.0, 0.0]).unwrap();
        let (loss, stats) = dpo_loss(&policy, &reference, &[pair(0, 0, 1)], 1.0).unwrap();
        assert!(loss < 1e-20, "loss = {loss}");
        assert!(loss.is_finite());
        assert_relative_eq!(stats.mean, 50.0, epsilon = 1e-9);
    }

    #[test]
    fn hand_margin_batch() {
        // Margins 0, 1, -1 via one-hot logits and three contexts... the
        // one-hot map shares theta across contexts, so use three batches and
        // average by hand instead.
        let features: SharedFeatures<f64> = Arc::new(OneHotFeatures { num_responses: 2 });
        let reference = ToyPolicy::with_theta(Arc::clone(&features), vec![0.0, 0.0]).unwrap();
        let expected = (2.0f64.ln() + (1.0 + (-1.0f64).exp()).ln() + (1.0 + 1.0f64.exp()).ln()) / 3.0;

        let mut total = 0.0;
        for margin in [0.0f64, 1.0, -1.0] {
            let policy =
                ToyPolicy::with_theta(Arc::clone(&features), vec![margin, 0.0]).unwrap();
            let (loss, _) = dpo_loss(&policy, &reference, &[pair(0, 0, 1)], 1.0).unwrap();
            total += loss;
        }
        assert_relative_eq!(total / 3.0, expected, epsilon = 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let features = hashed(3, 2, 0);
        let policy = ToyPolicy::<f64>::new(features);
        assert!(matches!(
            dpo_loss(&policy, &policy, &[], 1.0),
            Err(DpoError::EmptyBatch)
        ));
    }

    #[test]
    fn symmetric_features_give_zero_gradient() {
        // phi(x, y_w) == phi(x, y_l) for every context: a table where both
        // responses share one vector.
        use crate::dpo::features::TableFeatures;
        let mut table = TableFeatures::<f64>::new(3, 2);
        for context in 0..4u64 {
            let v = vec![0.3 * context as f64, -0.7, 1.1];
            table.insert(context, 0, v.clone());
            table.insert(context, 1, v);
        }
        let features: SharedFeatures<f64> = Arc::new(table);
        let policy = ToyPolicy::with_theta(Arc::clone(&features), vec![0.5, 0.5, 0.5]).unwrap();
        let reference = ToyPolicy::new(Arc::clone(&features));
        let batch: Vec<EncodedPair> = (0..4).map(|c| pair(c, 0, 1)).collect();
        let grad = dpo_gradient(&policy, &reference, &batch, 0.3).unwrap();
        for g in grad {
            assert_relative_eq!(g, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_pair_gradient_direction_invariant_to_beta() {
        let features = hashed(6, 3, 13);
        let policy =
            ToyPolicy::with_theta(Arc::clone(&features), vec![0.2, -0.4, 0.8, 0.0, 1.0, -1.0])
                .unwrap();
        let reference = ToyPolicy::new(Arc::clone(&features));
        let batch = [pair(9, 2, 0)];
        let g1 = dpo_gradient(&policy, &reference, &batch, 0.5).unwrap();
        let g2 = dpo_gradient(&policy, &reference, &batch, 1.5).unwrap();
        // Same direction: cosine similarity 1.
        let dot: f64 = g1.iter().zip(&g2).map(|(a, b)| a * b).sum();
        let n1: f64 = g1.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n2: f64 = g2.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_relative_eq!(dot / (n1 * n2), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        // Random small instances; mirrors the acceptance tolerance.
        let mut seed = 0u64;
        for trial in 0..25 {
            seed = seed.wrapping_add(trial + 1);
            let d = 2 + (trial as usize % 7);
            let m = 2 + (trial as usize % 3);
            let features = hashed(d, m, seed);
            let theta: Vec<f64> = (0..d)
                .map(|k| ((k as f64 + trial as f64) * 0.37).sin())
                .collect();
            let theta_ref: Vec<f64> = (0..d)
                .map(|k| ((k as f64 - trial as f64) * 0.51).cos() * 0.5)
                .collect();
            let policy = ToyPolicy::with_theta(Arc::clone(&features), theta.clone()).unwrap();
            let reference = ToyPolicy::with_theta(Arc::clone(&features), theta_ref).unwrap();
            let batch: Vec<EncodedPair> = (0..8)
                .map(|i| {
                    let w = (i as usize * 7 + trial as usize) % m;
                    let mut l = (i as usize * 3 + 1) % m;
                    if l == w {
                        l = (l + 1) % m;
                    }
                    pair(i, w, l)
                })
                .collect();
            let beta = 0.3 + 0.1 * (trial % 5) as f64;

            let grad = dpo_gradient(&policy, &reference, &batch, beta).unwrap();
            let h = 1e-5;
            for k in 0..d {
                let mut plus = theta.clone();
                plus[k] += h;
                let mut minus = theta.clone();
                minus[k] -= h;
                let (lp, _) = dpo_loss(
                    &ToyPolicy::with_theta(Arc::clone(&features), plus).unwrap(),
                    &reference,
                    &batch,
                    beta,
                )
                .unwrap();
                let (lm, _) = dpo_loss(
                    &ToyPolicy::with_theta(Arc::clone(&features), minus).unwrap(),
                    &reference,
                    &batch,
                    beta,
                )
                .unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let scale = grad[k].abs().max(fd.abs()).max(1e-8);
                assert!(
                    (grad[k] - fd).abs() / scale <= 1e-5,
                    "trial {trial} coord {k}: analytic {} vs fd {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn logit_shift_invariance() {
        // Adding a constant to every logit of either policy (one-hot map:
        // shift theta uniformly) leaves loss and gradient unchanged.
        let features: SharedFeatures<f64> = Arc::new(OneHotFeatures { num_responses: 3 });
        let policy =
            ToyPolicy::with_theta(Arc::clone(&features), vec![0.7, -0.2, 1.1]).unwrap();
        let reference =
            ToyPolicy::with_theta(Arc::clone(&features), vec![0.1, 0.4, -0.6]).unwrap();
        let batch = [pair(0, 0, 2), pair(0, 1, 0)];
        let (loss, _) = dpo_loss(&policy, &reference, &batch, 0.8).unwrap();
        let grad = dpo_gradient(&policy, &reference, &batch, 0.8).unwrap();

        let shift = 5.5;
        let policy_s = ToyPolicy::with_theta(
            Arc::clone(&features),
            policy.theta().iter().map(|t| t + shift).collect(),
        )
        .unwrap();
        let reference_s = ToyPolicy::with_theta(
            Arc::clone(&features),
            reference.theta().iter().map(|t| t + shift).collect(),
        )
        .unwrap();
        let (loss_s, _) = dpo_loss(&policy_s, &reference_s, &batch, 0.8).unwrap();
        let grad_s = dpo_gradient(&policy_s, &reference_s, &batch, 0.8).unwrap();
        assert_relative_eq!(loss, loss_s, epsilon = 1e-10);
        for (a, b) in grad.iter().zip(&grad_s) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }
}
