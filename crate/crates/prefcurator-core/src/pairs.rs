//! Preference-pair construction: max-reward chosen vs min-reward rejected
//! over a sampling budget, plus the chosen-response variants (extended
//! budget and external source) applied to the hardest fraction of prompts.
//!
//! The dataset is defined by the ranking: pairs come out in ranking order
//! and a ranked prompt without enough samples is an error, not a skip.
//! Skips are reserved for degenerate prompts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::difficulty::{partition_bands, DifficultyError};
use crate::records::{
    ChosenSource, DifficultyRanking, PreferencePair, ScoredSample, SkipReason, SkipRecord,
};

#[derive(Debug, thiserror::Error)]
pub enum PairsError {
    #[error("prompt {prompt_id}: has {have} samples, budget needs {need}")]
    InsufficientSamples {
        prompt_id: String,
        have: usize,
        need: usize,
    },
    #[error("prompt {prompt_id}: duplicate sample_idx {sample_idx}")]
    DuplicateSample { prompt_id: String, sample_idx: u32 },
    #[error("samples for one prompt expected, got {expected} and {found}")]
    MixedPrompts { expected: String, found: String },
    #[error("no external chosen samples for prompt {prompt_id}")]
    MissingExternal { prompt_id: String },
    #[error("invalid strategy: {reason}")]
    InvalidStrategy { reason: String },
    #[error(transparent)]
    Difficulty(#[from] DifficultyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStrategyKind {
    /// Max/min over the base budget for every prompt.
    MaxminBase,
    /// Chosen re-picked from an extended budget on the hardest fraction.
    ExtendedChosenBudget,
    /// Chosen taken from an external sample source on the hardest fraction.
    ExternalChosen,
}

/// Pair-construction strategy. The rejected response always comes from the
/// base policy budget; variants only replace the chosen side.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairStrategy {
    pub kind: PairStrategyKind,
    pub base_budget: u32,
    pub extended_budget: u32,
    /// Which hardest fraction of the ranking gets the variant treatment.
    pub hard_fraction: f64,
}

impl Default for PairStrategy {
    fn default() -> Self {
        Self {
            kind: PairStrategyKind::MaxminBase,
            base_budget: 5,
            extended_budget: 20,
            hard_fraction: 0.0,
        }
    }
}

impl PairStrategy {
    fn validate(&self) -> Result<(), PairsError> {
        if self.base_budget == 0 {
            return Err(PairsError::InvalidStrategy {
                reason: "base_budget must be >= 1".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(PairsError::InvalidStrategy {
                reason: format!("hard_fraction {} outside [0, 1]", self.hard_fraction),
            });
        }
        if self.kind == PairStrategyKind::ExtendedChosenBudget
            && self.extended_budget <= self.base_budget
        {
            return Err(PairsError::InvalidStrategy {
                reason: format!(
                    "extended_budget {} must exceed base_budget {}",
                    self.extended_budget, self.base_budget
                ),
            });
        }
        Ok(())
    }
}

/// Result of building one prompt's pair.
#[derive(Debug, Clone, PartialEq)]
pub enum PairOutcome {
    Pair(PreferencePair),
    Skip(SkipReason),
}

/// Pairs plus the skip log; `pairs.len() + skips.len()` equals the number of
/// prompts processed.
#[derive(Debug, Clone, Default)]
pub struct PairDataset {
    pub pairs: Vec<PreferencePair>,
    pub skips: Vec<SkipRecord>,
}

/// Sorts one prompt's samples by `sample_idx`, checking for duplicates.
fn sorted_window<'a>(
    prompt_id: &str,
    samples: &[&'a ScoredSample],
    need: usize,
) -> Result<Vec<&'a ScoredSample>, PairsError> {
    let mut sorted = samples.to_vec();
    sorted.sort_by_key(|s| s.sample_idx);
    for w in sorted.windows(2) {
        if w[0].sample_idx == w[1].sample_idx {
            return Err(PairsError::DuplicateSample {
                prompt_id: prompt_id.to_string(),
                sample_idx: w[0].sample_idx,
            });
        }
    }
    if sorted.len() < need {
        return Err(PairsError::InsufficientSamples {
            prompt_id: prompt_id.to_string(),
            have: sorted.len(),
            need,
        });
    }
    sorted.truncate(need);
    Ok(sorted)
}

/// Max-reward sample; ties go to the lowest `sample_idx`.
fn argmax<'a>(window: &[&'a ScoredSample]) -> &'a ScoredSample {
    window
        .iter()
        .fold(window[0], |best, s| if s.reward > best.reward { s } else { best })
}

/// Min-reward sample; ties go to the lowest `sample_idx`.
fn argmin<'a>(window: &[&'a ScoredSample]) -> &'a ScoredSample {
    window
        .iter()
        .fold(window[0], |best, s| if s.reward < best.reward { s } else { best })
}

/// Builds the max/min preference pair for one prompt from the first
/// `budget` samples by `sample_idx`. Returns a skip when every reward in
/// the window is equal or the extreme samples share their text.
pub fn build_pair(samples: &[ScoredSample], budget: u32) -> Result<PairOutcome, PairsError> {
    if samples.is_empty() {
        return Err(PairsError::InsufficientSamples {
            prompt_id: String::new(),
            have: 0,
            need: budget as usize,
        });
    }
    let prompt_id = &samples[0].prompt_id;
    for s in samples {
        if &s.prompt_id != prompt_id {
            return Err(PairsError::MixedPrompts {
                expected: prompt_id.clone(),
                found: s.prompt_id.clone(),
            });
        }
    }
    let refs: Vec<&ScoredSample> = samples.iter().collect();
    let window = sorted_window(prompt_id, &refs, budget as usize)?;
    Ok(maxmin_outcome(prompt_id, &window))
}

fn maxmin_outcome(prompt_id: &str, window: &[&ScoredSample]) -> PairOutcome {
    let chosen = argmax(window);
    let rejected = argmin(window);
    if chosen.reward == rejected.reward {
        return PairOutcome::Skip(SkipReason::DegenerateRewards);
    }
    if chosen.text == rejected.text {
        return PairOutcome::Skip(SkipReason::IdenticalText);
    }
    PairOutcome::Pair(PreferencePair {
        prompt_id: prompt_id.to_string(),
        chosen_text: chosen.text.clone(),
        rejected_text: rejected.text.clone(),
        chosen_reward: chosen.reward,
        rejected_reward: rejected.reward,
        chosen_source: ChosenSource::Policy,
    })
}

/// Builds the full pair dataset over a ranking.
///
/// Every prompt in the ranking must have enough samples for its treatment;
/// samples for prompts outside the ranking are ignored. Variant strategies
/// treat the hardest `hard_fraction` of the ranking and leave the rest on
/// the base max/min rule.
pub fn build_dataset(
    samples: &[ScoredSample],
    ranking: &DifficultyRanking,
    strategy: &PairStrategy,
    external: Option<&[ScoredSample]>,
) -> Result<PairDataset, PairsError> {
    strategy.validate()?;

    let mut by_prompt: BTreeMap<&str, Vec<&ScoredSample>> = BTreeMap::new();
    for s in samples {
        by_prompt.entry(&s.prompt_id).or_default().push(s);
    }
    let mut external_by_prompt: BTreeMap<&str, Vec<&ScoredSample>> = BTreeMap::new();
    if let Some(ext) = external {
        for s in ext {
            external_by_prompt.entry(&s.prompt_id).or_default().push(s);
        }
    }

    let treated: std::collections::BTreeSet<String> = if strategy.kind
        == PairStrategyKind::MaxminBase
        || strategy.hard_fraction == 0.0
    {
        Default::default()
    } else if strategy.hard_fraction >= 1.0 {
        ranking.iter().map(|e| e.prompt_id.clone()).collect()
    } else {
        partition_bands(ranking, &[strategy.hard_fraction])?
            .hardest()
            .iter()
            .cloned()
            .collect()
    };

    let mut dataset = PairDataset::default();
    for entry in ranking.iter() {
        let prompt_id = entry.prompt_id.as_str();
        let group = by_prompt.get(prompt_id).map(Vec::as_slice).unwrap_or(&[]);
        let need_base = strategy.base_budget as usize;
        let is_treated = treated.contains(prompt_id);

        let outcome = if !is_treated {
            let window = sorted_window(prompt_id, group, need_base)?;
            maxmin_outcome(prompt_id, &window)
        } else {
            match strategy.kind {
                PairStrategyKind::MaxminBase => unreachable!("treated set is empty"),
                PairStrategyKind::ExtendedChosenBudget => {
                    let extended =
                        sorted_window(prompt_id, group, strategy.extended_budget as usize)?;
                    let base = &extended[..need_base];
                    let chosen = argmax(&extended);
                    let rejected = argmin(base);
                    if chosen.reward == rejected.reward {
                        PairOutcome::Skip(SkipReason::DegenerateRewards)
                    } else if chosen.text == rejected.text {
                        PairOutcome::Skip(SkipReason::IdenticalText)
                    } else {
                        PairOutcome::Pair(PreferencePair {
                            prompt_id: prompt_id.to_string(),
                            chosen_text: chosen.text.clone(),
                            rejected_text: rejected.text.clone(),
                            chosen_reward: chosen.reward,
                            rejected_reward: rejected.reward,
                            chosen_source: ChosenSource::ExtendedBudget,
                        })
                    }
                }
                PairStrategyKind::ExternalChosen => {
                    let ext_group = external_by_prompt
                        .get(prompt_id)
                        .filter(|g| !g.is_empty())
                        .ok_or_else(|| PairsError::MissingExternal {
                            prompt_id: prompt_id.to_string(),
                        })?;
                    let ext_sorted = sorted_window(prompt_id, ext_group, ext_group.len())?;
                    let chosen = argmax(&ext_sorted);
                    let base = sorted_window(prompt_id, group, need_base)?;
                    let rejected = argmin(&base);
                    if chosen.reward < rejected.reward {
                        PairOutcome::Skip(SkipReason::ExternalWorse)
                    } else if chosen.text == rejected.text {
                        PairOutcome::Skip(SkipReason::IdenticalText)
                    } else {
                        PairOutcome::Pair(PreferencePair {
                            prompt_id: prompt_id.to_string(),
                            chosen_text: chosen.text.clone(),
                            rejected_text: rejected.text.clone(),
                            chosen_reward: chosen.reward,
                            rejected_reward: rejected.reward,
                            chosen_source: ChosenSource::External,
                        })
                    }
                }
            }
        };

        match outcome {
            PairOutcome::Pair(pair) => dataset.pairs.push(pair),
            PairOutcome::Skip(reason) => dataset.skips.push(SkipRecord {
                prompt_id: prompt_id.to_string(),
                reason,
            }),
        }
    }
    Ok(dataset)
}
