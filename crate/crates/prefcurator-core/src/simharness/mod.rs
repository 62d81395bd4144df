//! Synthetic world with known ground-truth prompt difficulty, plus the
//! end-to-end experiments that verify the pipeline's qualitative behavior.
//!
//! The harness is a modeling device, not a claim about language models: a
//! linear mean-reward model and a linear label-noise coupling are the
//! smallest family that exhibits ranking recoverability, the hard-prompt
//! penalty, and capacity closing the gap.

mod experiments;
mod world;

pub use experiments::{
    run_paper_experiment, ArmReport, Experiment, ExperimentParams, ExperimentReport,
    ToyTrainParams,
};
pub use world::{generate_world, sample_responses, SampledResponses, SimError, SynthWorld, WorldParams};
