//! Dataset-level curation: prune-hardest-k%, random drop, easy-to-hard
//! curriculum ordering, full-set passthrough, and k-sweeps.
//!
//! Pruning operates on prompts (the paper's unit of difficulty) and then
//! restricts pairs. Training order matters to DPO, so every strategy pins
//! its output order with a seeded shuffle or an explicit sort.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::difficulty::ceil_fraction;
use crate::records::{DifficultyRanking, PreferencePair};

#[derive(Debug, thiserror::Error)]
pub enum CurationError {
    #[error("pair references prompt {prompt_id} absent from the ranking")]
    UnknownPrompt { prompt_id: String },
    #[error("invalid plan: {reason}")]
    InvalidPlan { reason: String },
    #[error("invalid k values: {reason}")]
    InvalidKValues { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurationStrategy {
    Full,
    PruneHardest,
    RandomDrop,
    Curriculum,
}

/// A curation plan. `k_percent` is the fraction of prompts to drop and must
/// be 0 for the strategies that drop nothing (FULL, CURRICULUM).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurationPlan {
    pub strategy: CurationStrategy,
    pub k_percent: f64,
    pub seed: u64,
}

impl CurationPlan {
    pub fn new(strategy: CurationStrategy, k_percent: f64, seed: u64) -> Self {
        Self {
            strategy,
            k_percent,
            seed,
        }
    }

    fn validate(&self) -> Result<(), CurationError> {
        if !(0.0..1.0).contains(&self.k_percent) {
            return Err(CurationError::InvalidPlan {
                reason: format!("k_percent {} outside [0, 1)", self.k_percent),
            });
        }
        let drops = matches!(
            self.strategy,
            CurationStrategy::PruneHardest | CurationStrategy::RandomDrop
        );
        if !drops && self.k_percent != 0.0 {
            return Err(CurationError::InvalidPlan {
                reason: format!("{:?} does not drop prompts; k_percent must be 0", self.strategy),
            });
        }
        Ok(())
    }
}

/// Applies a curation plan, returning the curated pairs in training order.
pub fn curate(
    pairs: &[PreferencePair],
    ranking: &DifficultyRanking,
    plan: &CurationPlan,
) -> Result<Vec<PreferencePair>, CurationError> {
    plan.validate()?;

    let mean_by_prompt: HashMap<&str, f64> = ranking
        .iter()
        .map(|e| (e.prompt_id.as_str(), e.mean_reward))
        .collect();
    for pair in pairs {
        if !mean_by_prompt.contains_key(pair.prompt_id.as_str()) {
            return Err(CurationError::UnknownPrompt {
                prompt_id: pair.prompt_id.clone(),
            });
        }
    }

    let n = ranking.len();
    let drop_count = ceil_fraction(plan.k_percent, n);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);

    let mut curated: Vec<PreferencePair> = match plan.strategy {
        CurationStrategy::Full => pairs.to_vec(),
        CurationStrategy::PruneHardest => {
            let dropped: HashSet<&str> = ranking.entries()[..drop_count]
                .iter()
                .map(|e| e.prompt_id.as_str())
                .collect();
            pairs
                .iter()
                .filter(|p| !dropped.contains(p.prompt_id.as_str()))
                .cloned()
                .collect()
        }
        CurationStrategy::RandomDrop => {
            let chosen = rand::seq::index::sample(&mut rng, n, drop_count);
            let dropped: HashSet<&str> = chosen
                .iter()
                .map(|i| ranking.entries()[i].prompt_id.as_str())
                .collect();
            pairs
                .iter()
                .filter(|p| !dropped.contains(p.prompt_id.as_str()))
                .cloned()
                .collect()
        }
        CurationStrategy::Curriculum => {
            let mut ordered = pairs.to_vec();
            // Easiest (highest mean) first; ties by prompt id ascending.
            // Stable sort keeps input order within a prompt.
            ordered.sort_by(|a, b| {
                let ma = mean_by_prompt[a.prompt_id.as_str()];
                let mb = mean_by_prompt[b.prompt_id.as_str()];
                mb.total_cmp(&ma).then_with(|| a.prompt_id.cmp(&b.prompt_id))
            });
            return Ok(ordered);
        }
    };
    curated.shuffle(&mut rng);
    Ok(curated)
}

/// One k-sweep cell. `metric` is absent when the evaluator failed; `status`
/// is either `"ok"` or `"error: ..."`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: f64,
    pub metric: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

/// Runs prune-hardest curation at each `k` and applies the evaluator to the
/// curated pairs. Evaluator failures mark their cell and the sweep goes on.
pub fn sweep<F>(
    pairs: &[PreferencePair],
    ranking: &DifficultyRanking,
    k_values: &[f64],
    seed: u64,
    mut evaluator: F,
) -> Result<SweepReport, CurationError>
where
    F: FnMut(f64, &[PreferencePair]) -> Result<f64, String>,
{
    if k_values.is_empty() {
        return Err(CurationError::InvalidKValues {
            reason: "no k values given".into(),
        });
    }
    for w in k_values.windows(2) {
        if w[0] >= w[1] {
            return Err(CurationError::InvalidKValues {
                reason: format!("k values must be strictly ascending: {} >= {}", w[0], w[1]),
            });
        }
    }
    if !(0.0..1.0).contains(&k_values[0]) || !(0.0..1.0).contains(k_values.last().unwrap()) {
        return Err(CurationError::InvalidKValues {
            reason: "k values must lie in [0, 1)".into(),
        });
    }

    let mut cells = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let plan = CurationPlan::new(CurationStrategy::PruneHardest, k, seed);
        let curated = curate(pairs, ranking, &plan)?;
        match evaluator(k, &curated) {
            Ok(metric) => cells.push(SweepCell {
                k,
                metric: Some(metric),
                status: "ok".into(),
            }),
            Err(msg) => cells.push(SweepCell {
                k,
                metric: None,
                status: format!("error: {msg}"),
            }),
        }
    }
    Ok(SweepReport { cells })
}
