//! Difficulty-aware curation of preference data for DPO-style alignment.
//!
//! The pipeline: score sampled responses with a reward source
//! ([`gateway`]), rank prompts by mean sample reward ([`difficulty`]),
//! build max/min preference pairs ([`pairs`]), curate the set
//! ([`curation`]), and train/evaluate a desk-scale policy ([`dpo`]).
//! [`stats`] supplies the rank statistics behind stability and
//! transferability analysis, and [`simharness`] drives the whole pipeline
//! against synthetic worlds with known ground truth.

pub mod curation;
pub mod difficulty;
pub mod dpo;
pub mod gateway;
pub mod hashing;
pub mod pairs;
pub mod records;
pub mod scalar;
pub mod simharness;
pub mod stats;

pub use records::{
    ChosenSource, DifficultyEntry, DifficultyRanking, PreferencePair, PromptRecord, ScoredSample,
};
pub use scalar::Real;

/// Scalar type of rewards and every serialized record.
pub type Reward = f64;

/// Concrete policy type used by the pipeline and the CLI.
pub type Policy = dpo::ToyPolicy<f64>;
