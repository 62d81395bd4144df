//! The toy softmax-linear policy over a finite response set.
//!
//! Logits are `theta . phi(x, y)`; probabilities are the softmax over the M
//! responses of a context. Small enough that log-probabilities and their
//! gradients are exact and checkable against finite differences.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::features::SharedFeatures;
use super::DpoError;
use crate::scalar::Real;

#[derive(Clone)]
pub struct ToyPolicy<T: Real> {
    theta: Vec<T>,
    features: SharedFeatures<T>,
}

impl<T: Real> ToyPolicy<T> {
    /// Zero-initialized policy (uniform over responses for every context).
    pub fn new(features: SharedFeatures<T>) -> Self {
        let dim = features.dim();
        Self {
            theta: vec![T::zero(); dim],
            features,
        }
    }

    pub fn with_theta(features: SharedFeatures<T>, theta: Vec<T>) -> Result<Self, DpoError> {
        if theta.len() != features.dim() {
            return Err(DpoError::DimensionMismatch {
                theta: theta.len(),
                features: features.dim(),
            });
        }
        Ok(Self { theta, features })
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub(crate) fn theta_mut(&mut self) -> &mut [T] {
        &mut self.theta
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn num_responses(&self) -> usize {
        self.features.num_responses()
    }

    pub fn features(&self) -> SharedFeatures<T> {
        Arc::clone(&self.features)
    }

    /// Both policies must share geometry for implicit rewards to compare.
    pub(crate) fn check_compatible(&self, other: &Self) -> Result<(), DpoError> {
        if self.dim() != other.dim() || self.num_responses() != other.num_responses() {
            return Err(DpoError::IncompatiblePolicies);
        }
        Ok(())
    }

    pub fn logits(&self, context: u64) -> Vec<T> {
        let m = self.num_responses();
        let mut buf = vec![T::zero(); self.dim()];
        (0..m)
            .map(|response| {
                self.features.write_features(context, response, &mut buf);
                dot(&self.theta, &buf)
            })
            .collect()
    }

    /// Log-probabilities via a max-shifted log-softmax.
    pub fn log_probs(&self, context: u64) -> Vec<T> {
        log_softmax(&self.logits(context))
    }

    pub fn log_prob(&self, context: u64, response: usize) -> Result<T, DpoError> {
        self.check_response(response)?;
        Ok(self.log_probs(context)[response])
    }

    /// Gradient of `log pi(response | context)` with respect to theta:
    /// `phi(x, y) - E_{y' ~ pi}[phi(x, y')]`.
    pub fn grad_log_prob(&self, context: u64, response: usize) -> Result<Vec<T>, DpoError> {
        self.check_response(response)?;
        let log_probs = self.log_probs(context);
        let mut grad = self.features.features(context, response);
        let mut buf = vec![T::zero(); self.dim()];
        for (y, &lp) in log_probs.iter().enumerate() {
            let p = lp.exp();
            self.features.write_features(context, y, &mut buf);
            for (g, &f) in grad.iter_mut().zip(&buf) {
                *g = *g - p * f;
            }
        }
        Ok(grad)
    }

    fn check_response(&self, response: usize) -> Result<(), DpoError> {
        if response >= self.num_responses() {
            return Err(DpoError::InvalidResponseIndex {
                response,
                num_responses: self.num_responses(),
            });
        }
        Ok(())
    }
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_z = logits
        .iter()
        .map(|&l| (l - max).exp())
        .sum::<T>()
        .ln()
        + max;
    logits.iter().map(|&l| l - log_z).collect()
}

/// Serialized policy parameters (the `policy.json` schema).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    pub theta: Vec<f64>,
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
}

impl PolicyFile {
    pub fn from_policy(policy: &ToyPolicy<f64>) -> Self {
        Self {
            theta: policy.theta().to_vec(),
            d: policy.dim(),
            m: policy.num_responses(),
        }
    }

    pub fn into_policy(self, features: SharedFeatures<f64>) -> Result<ToyPolicy<f64>, DpoError> {
        if features.dim() != self.d || features.num_responses() != self.m {
            return Err(DpoError::IncompatiblePolicies);
        }
        ToyPolicy::with_theta(features, self.theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpo::features::HashedFeatures;
    use approx::assert_relative_eq;

    fn hashed(dim: usize, m: usize, seed: u64) -> SharedFeatures<f64> {
        Arc::new(HashedFeatures {
            dim,
            num_responses: m,
            seed,
        })
    }

    #[test]
    fn probabilities_normalize() {
        let features = hashed(6, 4, 11);
        let policy =
            ToyPolicy::with_theta(features, vec![0.3, -1.2, 0.7, 2.0, -0.4, 0.05]).unwrap();
        for context in [0u64, 1, 99, 12345] {
            let total: f64 = policy.log_probs(context).iter().map(|lp| lp.exp()).sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_theta_is_uniform() {
        let policy = ToyPolicy::<f64>::new(hashed(5, 4, 3));
        let lp = policy.log_probs(7);
        for &v in &lp {
            assert_relative_eq!(v, (0.25f64).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn grad_log_prob_matches_finite_differences() {
        let features = hashed(5, 3, 21);
        let theta = vec![0.4, -0.3, 1.1, 0.0, -0.9];
        let policy = ToyPolicy::with_theta(Arc::clone(&features), theta.clone()).unwrap();
        let context = 5u64;
        let response = 2usize;
        let grad = policy.grad_log_prob(context, response).unwrap();

        let h = 1e-6;
        for k in 0..theta.len() {
            let mut plus = theta.clone();
            plus[k] += h;
            let mut minus = theta.clone();
            minus[k] -= h;
            let lp_plus = ToyPolicy::with_theta(Arc::clone(&features), plus)
                .unwrap()
                .log_prob(context, response)
                .unwrap();
            let lp_minus = ToyPolicy::with_theta(Arc::clone(&features), minus)
                .unwrap()
                .log_prob(context, response)
                .unwrap();
            let fd = (lp_plus - lp_minus) / (2.0 * h);
            assert_relative_eq!(grad[k], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn out_of_range_response_rejected() {
        let policy = ToyPolicy::<f64>::new(hashed(4, 2, 0));
        assert!(matches!(
            policy.log_prob(0, 2),
            Err(DpoError::InvalidResponseIndex { .. })
        ));
    }

    #[test]
    fn policy_file_round_trip() {
        let features = hashed(3, 2, 9);
        let policy = ToyPolicy::with_theta(Arc::clone(&features), vec![1.5, -2.25, 0.125]).unwrap();
        let file = PolicyFile::from_policy(&policy);
        let json = serde_json::to_string(&file).unwrap();
        assert_eq!(json, "{\"theta\":[1.5,-2.25,0.125],\"d\":3,\"M\":2}");
        let back: PolicyFile = serde_json::from_str(&json).unwrap();
        let restored = back.into_policy(features).unwrap();
        assert_eq!(restored.theta(), policy.theta());
    }
}
