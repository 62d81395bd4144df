//! Desk-scale DPO: implicit reward, Bradley-Terry preference probability,
//! loss and analytic gradient over a softmax-linear policy, and a minimal
//! order-respecting trainer.
//!
//! The partition term `beta * log Z(x)` is never materialized; it cancels
//! in every pairwise margin.

mod features;
mod loss;
mod policy;
mod train;

pub use features::{
    EncodedPair, Features, HashedFeatures, OneHotFeatures, PairEncoder, SharedFeatures,
    TableFeatures,
};
pub use loss::{dpo_gradient, dpo_loss, implicit_reward, MarginStats};
pub use policy::{PolicyFile, ToyPolicy};
pub use train::{
    eval_preference_accuracy, trace_to_csv, train, DpoConfig, TraceRow, TrainError, TrainOutcome,
};

#[derive(Debug, thiserror::Error)]
pub enum DpoError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty held-out set")]
    EmptySet,
    #[error("beta {0} must be positive and finite")]
    InvalidBeta(f64),
    #[error("invalid config: {reason}")]
    InvalidConfig { reason: String },
    #[error("response index {response} out of range for M = {num_responses}")]
    InvalidResponseIndex {
        response: usize,
        num_responses: usize,
    },
    #[error("theta has {theta} components but the feature map is {features}-dimensional")]
    DimensionMismatch { theta: usize, features: usize },
    #[error("policies do not share feature geometry")]
    IncompatiblePolicies,
}
