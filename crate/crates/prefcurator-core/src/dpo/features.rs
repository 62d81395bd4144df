//! Feature maps for the toy softmax-linear policy, and the encoding that
//! turns preference pairs into (context, response index) form.

use std::collections::HashMap;
use std::sync::Arc;

use crate::hashing::{stable_hash, unit_from_hash};
use crate::records::PreferencePair;
use crate::scalar::Real;

/// Deterministic map from (context, response index) to a d-dimensional
/// feature vector. Policies sharing a feature map are comparable.
pub trait Features<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of responses per context (M).
    fn num_responses(&self) -> usize;

    fn write_features(&self, context: u64, response: usize, out: &mut [T]);

    fn features(&self, context: u64, response: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.write_features(context, response, &mut out);
        out
    }
}

/// Pseudo-random features hashed from (seed, context, response, coordinate),
/// uniform in [-1, 1). The default map for training on arbitrary pair files.
#[derive(Debug, Clone)]
pub struct HashedFeatures {
    pub dim: usize,
    pub num_responses: usize,
    pub seed: u64,
}

impl<T: Real> Features<T> for HashedFeatures {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_responses(&self) -> usize {
        self.num_responses
    }

    fn write_features(&self, context: u64, response: usize, out: &mut [T]) {
        for (k, slot) in out.iter_mut().enumerate() {
            let h = stable_hash(&[
                self.seed.into(),
                context.into(),
                response.into(),
                k.into(),
            ]);
            *slot = T::from_f64_lossy(unit_from_hash(h) * 2.0 - 1.0);
        }
    }
}

/// Explicit feature table, used by the synthetic harness where the features
/// carry a controlled quality direction. Missing entries are zero vectors.
pub struct TableFeatures<T> {
    dim: usize,
    num_responses: usize,
    table: HashMap<(u64, usize), Vec<T>>,
}

impl<T: Real> TableFeatures<T> {
    pub fn new(dim: usize, num_responses: usize) -> Self {
        Self {
            dim,
            num_responses,
            table: HashMap::new(),
        }
    }

    pub fn insert(&mut self, context: u64, response: usize, features: Vec<T>) {
        assert_eq!(features.len(), self.dim, "feature dimension mismatch");
        assert!(response < self.num_responses, "response index out of range");
        self.table.insert((context, response), features);
    }
}

impl<T: Real> Features<T> for TableFeatures<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_responses(&self) -> usize {
        self.num_responses
    }

    fn write_features(&self, context: u64, response: usize, out: &mut [T]) {
        match self.table.get(&(context, response)) {
            Some(v) => out.copy_from_slice(v),
            None => out.fill(T::zero()),
        }
    }
}

/// One-hot features: d == M and phi(x, y) = e_y, so theta is directly the
/// logit vector shared by every context. Handy for hand-set-logit tests.
#[derive(Debug, Clone)]
pub struct OneHotFeatures {
    pub num_responses: usize,
}

impl<T: Real> Features<T> for OneHotFeatures {
    fn dim(&self) -> usize {
        self.num_responses
    }

    fn num_responses(&self) -> usize {
        self.num_responses
    }

    fn write_features(&self, _context: u64, response: usize, out: &mut [T]) {
        out.fill(T::zero());
        out[response] = T::one();
    }
}

/// A preference pair mapped to the toy encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodedPair {
    pub context: u64,
    pub winner: usize,
    pub loser: usize,
}

/// Hash-based pair encoder: context from the prompt id, response indices
/// from the response texts modulo M. On the (rare) index collision the
/// loser is displaced to the next slot so the pair stays trainable.
#[derive(Debug, Clone)]
pub struct PairEncoder {
    pub num_responses: usize,
    pub seed: u64,
}

impl PairEncoder {
    pub fn encode(&self, pair: &PreferencePair) -> EncodedPair {
        let context = stable_hash(&[self.seed.into(), "ctx".into(), pair.prompt_id.as_str().into()]);
        let m = self.num_responses as u64;
        let winner =
            (stable_hash(&[self.seed.into(), "resp".into(), pair.chosen_text.as_str().into()]) % m)
                as usize;
        let mut loser =
            (stable_hash(&[self.seed.into(), "resp".into(), pair.rejected_text.as_str().into()])
                % m) as usize;
        if loser == winner {
            loser = (loser + 1) % self.num_responses;
        }
        EncodedPair {
            context,
            winner,
            loser,
        }
    }

    pub fn encode_all(&self, pairs: &[PreferencePair]) -> Vec<EncodedPair> {
        pairs.iter().map(|p| self.encode(p)).collect()
    }
}

/// Convenience alias for shared feature maps.
pub type SharedFeatures<T> = Arc<dyn Features<T>>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::ChosenSource;

    #[test]
    fn hashed_features_are_deterministic_and_bounded() {
        let map = HashedFeatures {
            dim: 8,
            num_responses: 4,
            seed: 7,
        };
        let a: Vec<f64> = map.features(42, 1);
        let b: Vec<f64> = map.features(42, 1);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
        let c: Vec<f64> = map.features(42, 2);
        assert_ne!(a, c);
    }

    #[test]
    fn encoder_never_maps_pair_to_one_index() {
        let encoder = PairEncoder {
            num_responses: 2,
            seed: 0,
        };
        for i in 0..200 {
            let pair = PreferencePair {
                prompt_id: format!("p{i}"),
                chosen_text: format!("text{}", i * 2),
                rejected_text: format!("text{}", i * 2 + 1),
                chosen_reward: 1.0,
                rejected_reward: 0.0,
                chosen_source: ChosenSource::Policy,
            };
            let enc = encoder.encode(&pair);
            assert_ne!(enc.winner, enc.loser);
            assert!(enc.winner < 2 && enc.loser < 2);
        }
    }
}
