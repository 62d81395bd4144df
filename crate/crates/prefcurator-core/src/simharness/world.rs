//! Synthetic world with known ground-truth prompt difficulty.
//!
//! Per prompt i, a latent difficulty `delta_i ~ Uniform(0, 1)` fixes the
//! expected sample reward `mu_i = capacity - difficulty_gain * delta_i`.
//! Harder prompts also produce noisier preference labels: a pair's true
//! orientation is flipped with probability
//! `min(0.5, slope * max(0, delta_i - max(0, capacity - 1)))`, so at
//! capacity 1 the flip rate is `min(0.5, slope * delta_i)` and extra
//! capacity pushes the flip onset toward the hardest prompts only. The cap
//! at 0.5 matters: beyond it flips would invert the signal instead of
//! destroying it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::hashing::stable_hash;
use crate::records::{PromptRecord, ScoredSample};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("bad world parameters: {reason}")]
    BadParams { reason: String },
    #[error(transparent)]
    Difficulty(#[from] crate::difficulty::DifficultyError),
    #[error(transparent)]
    Pairs(#[from] crate::pairs::PairsError),
    #[error(transparent)]
    Curation(#[from] crate::curation::CurationError),
    #[error(transparent)]
    Dpo(#[from] crate::dpo::DpoError),
    #[error("training failed: {0}")]
    Train(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldParams {
    pub n_prompts: usize,
    /// Policy capacity; raises every mean reward and, past 1.0, shrinks the
    /// label-noise region.
    pub capacity: f64,
    /// Reward units per unit of latent difficulty. Controls how far apart
    /// prompt means sit relative to sample noise.
    pub difficulty_gain: f64,
    /// Per-sample reward noise sigma.
    pub noise_sigma: f64,
    /// Label-noise slope lambda.
    pub label_noise_slope: f64,
    pub seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            n_prompts: 400,
            capacity: 1.0,
            difficulty_gain: 4.0,
            noise_sigma: 1.0,
            label_noise_slope: 0.6,
            seed: 0,
        }
    }
}

/// A generated world: parameters plus the latent difficulty draw.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    params: WorldParams,
    latent: Vec<f64>,
}

/// Deterministically generates a world from its parameters.
pub fn generate_world(params: WorldParams) -> Result<SynthWorld, SimError> {
    if params.n_prompts < 2 {
        return Err(SimError::BadParams {
            reason: format!("n_prompts {} must be >= 2", params.n_prompts),
        });
    }
    if params.noise_sigma < 0.0 || params.label_noise_slope < 0.0 || params.capacity < 0.0 {
        return Err(SimError::BadParams {
            reason: "capacity, noise_sigma and label_noise_slope must be >= 0".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[params.seed.into(), "latent".into()]));
    let latent = (0..params.n_prompts).map(|_| rng.random::<f64>()).collect();
    Ok(SynthWorld { params, latent })
}

impl SynthWorld {
    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn n_prompts(&self) -> usize {
        self.params.n_prompts
    }

    pub fn latent_difficulty(&self) -> &[f64] {
        &self.latent
    }

    pub fn prompt_id(&self, index: usize) -> String {
        format!("p{index:05}")
    }

    /// Index back out of a world prompt id.
    pub fn prompt_index(&self, id: &str) -> Option<usize> {
        id.strip_prefix('p').and_then(|s| s.parse().ok())
    }

    pub fn prompts(&self) -> Vec<PromptRecord> {
        (0..self.n_prompts())
            .map(|i| PromptRecord {
                id: self.prompt_id(i),
                text: format!("synthetic prompt {i} (world seed {})", self.params.seed),
            })
            .collect()
    }

    /// Expected sample reward for prompt `index`.
    pub fn mean_reward(&self, index: usize) -> f64 {
        self.params.capacity - self.params.difficulty_gain * self.latent[index]
    }

    /// Probability that prompt `index`'s pair label is flipped.
    pub fn flip_probability(&self, index: usize) -> f64 {
        let onset = (self.params.capacity - 1.0).max(0.0);
        let exposed = (self.latent[index] - onset).max(0.0);
        (self.params.label_noise_slope * exposed).min(0.5)
    }
}

/// Samples plus the per-prompt ground-truth label state.
#[derive(Debug, Clone)]
pub struct SampledResponses {
    pub samples: Vec<ScoredSample>,
    /// True iff the prompt's constructed pair has its true orientation
    /// reversed: the reward model misjudged which response is better.
    pub flipped: Vec<bool>,
}

/// Draws `n_per_prompt` rewards per prompt, i.i.d. Normal(mu_i, sigma).
///
/// Each prompt owns an RNG stream seeded from (world seed, prompt index),
/// so sample j is the same no matter how many samples are requested --
/// budget comparisons see nested prefixes, and repeated calls agree.
pub fn sample_responses(world: &SynthWorld, n_per_prompt: u32) -> SampledResponses {
    let sigma = world.params.noise_sigma;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut samples = Vec::with_capacity(world.n_prompts() * n_per_prompt as usize);
    let mut flipped = Vec::with_capacity(world.n_prompts());
    for i in 0..world.n_prompts() {
        let prompt_id = world.prompt_id(i);
        let mean = world.mean_reward(i);
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[
            world.params.seed.into(),
            "samples".into(),
            i.into(),
        ]));
        for j in 0..n_per_prompt {
            let noise = if sigma > 0.0 {
                sigma * normal.sample(&mut rng)
            } else {
                0.0
            };
            samples.push(ScoredSample {
                prompt_id: prompt_id.clone(),
                sample_idx: j,
                reward: mean + noise,
                text: format!("{prompt_id}-r{j:03}"),
            });
        }
        let mut flip_rng = ChaCha8Rng::seed_from_u64(stable_hash(&[
            world.params.seed.into(),
            "flip".into(),
            i.into(),
        ]));
        flipped.push(flip_rng.random::<f64>() < world.flip_probability(i));
    }
    SampledResponses { samples, flipped }
}
