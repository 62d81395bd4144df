//! Mean-reward difficulty scoring, rankings, band partitioning, and
//! sampling-budget stability analysis.
//!
//! A prompt's difficulty proxy is the arithmetic mean of its sample rewards;
//! lower mean = harder prompt. Budgets select the first `n` samples by
//! `sample_idx` (never a random subset) so scores are reproducible.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::records::{DifficultyEntry, DifficultyRanking, ScoredSample};
use crate::stats::{self, StatsError};

#[derive(Debug, thiserror::Error)]
pub enum DifficultyError {
    #[error("prompt {prompt_id}: has {have} samples, budget needs {need}")]
    InsufficientSamples {
        prompt_id: String,
        have: usize,
        need: usize,
    },
    #[error("prompt {prompt_id}: duplicate sample_idx {sample_idx}")]
    DuplicateSample { prompt_id: String, sample_idx: u32 },
    #[error("prompt {prompt_id}: non-finite reward at sample_idx {sample_idx}")]
    NonFiniteReward { prompt_id: String, sample_idx: u32 },
    #[error("duplicate prompt {prompt_id} in difficulty entries")]
    DuplicatePrompt { prompt_id: String },
    #[error("ranking is empty")]
    EmptyRanking,
    #[error("bad band edges: {reason}")]
    BadEdges { reason: String },
    #[error("bad budgets: {reason}")]
    BadBudgets { reason: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// How many samples per prompt feed the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleBudget {
    /// Use every available sample.
    All,
    /// Use the first `n` samples ordered by `sample_idx`.
    First(u32),
}

/// `ceil(fraction * n)` with a guard against upward float error on exact
/// multiples (e.g. `0.3 * 20` evaluating to `6.000000000000001`).
pub(crate) fn ceil_fraction(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Computes one `DifficultyEntry` per prompt, output sorted by prompt id.
///
/// Per-prompt sums run in `sample_idx` order so results are independent of
/// input permutation and of any caller-side parallelism.
pub fn compute_difficulty(
    samples: &[ScoredSample],
    budget: SampleBudget,
) -> Result<Vec<DifficultyEntry>, DifficultyError> {
    let mut by_prompt: BTreeMap<&str, Vec<&ScoredSample>> = BTreeMap::new();
    for s in samples {
        if !s.reward.is_finite() {
            return Err(DifficultyError::NonFiniteReward {
                prompt_id: s.prompt_id.clone(),
                sample_idx: s.sample_idx,
            });
        }
        by_prompt.entry(&s.prompt_id).or_default().push(s);
    }

    let mut entries = Vec::with_capacity(by_prompt.len());
    for (prompt_id, mut group) in by_prompt {
        group.sort_by_key(|s| s.sample_idx);
        for w in group.windows(2) {
            if w[0].sample_idx == w[1].sample_idx {
                return Err(DifficultyError::DuplicateSample {
                    prompt_id: prompt_id.to_string(),
                    sample_idx: w[0].sample_idx,
                });
            }
        }
        let used = match budget {
            SampleBudget::All => group.len(),
            SampleBudget::First(n) => {
                let n = n as usize;
                if group.len() < n {
                    return Err(DifficultyError::InsufficientSamples {
                        prompt_id: prompt_id.to_string(),
                        have: group.len(),
                        need: n,
                    });
                }
                n
            }
        };
        if used == 0 {
            return Err(DifficultyError::BadBudgets {
                reason: "budget must be >= 1".into(),
            });
        }
        let sum: f64 = group[..used].iter().map(|s| s.reward).sum();
        entries.push(DifficultyEntry {
            prompt_id: prompt_id.to_string(),
            mean_reward: sum / used as f64,
            n: used as u32,
        });
    }
    Ok(entries)
}

/// Sorts entries hardest-first: ascending mean reward, ties by prompt id.
pub fn rank_by_difficulty(
    entries: &[DifficultyEntry],
) -> Result<DifficultyRanking, DifficultyError> {
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| {
        a.mean_reward
            .total_cmp(&b.mean_reward)
            .then_with(|| a.prompt_id.cmp(&b.prompt_id))
    });
    for w in sorted.windows(2) {
        if w[0].prompt_id == w[1].prompt_id {
            return Err(DifficultyError::DuplicatePrompt {
                prompt_id: w[0].prompt_id.clone(),
            });
        }
    }
    Ok(DifficultyRanking::from_sorted_unchecked(sorted))
}

/// Contiguous difficulty bands over a ranking. Band 0 is the hardest.
#[derive(Debug, Clone, Serialize)]
pub struct DifficultyBands {
    pub quantile_edges: Vec<f64>,
    /// prompt id -> band index (0 = hardest).
    pub band_assignments: BTreeMap<String, usize>,
    /// Band members in ranking order.
    pub bands: Vec<Vec<String>>,
}

impl DifficultyBands {
    /// Prompt ids of the hardest band, in ranking order.
    pub fn hardest(&self) -> &[String] {
        &self.bands[0]
    }
}

/// Splits a ranking at the given quantile edges. The hardest band takes
/// `ceil(e0 * n)` prompts, each following band `ceil((e_j - e_{j-1}) * n)`,
/// and the final band the remainder.
pub fn partition_bands(
    ranking: &DifficultyRanking,
    edges: &[f64],
) -> Result<DifficultyBands, DifficultyError> {
    if ranking.is_empty() {
        return Err(DifficultyError::EmptyRanking);
    }
    if edges.is_empty() {
        return Err(DifficultyError::BadEdges {
            reason: "no edges given".into(),
        });
    }
    for w in edges.windows(2) {
        if w[0] >= w[1] {
            return Err(DifficultyError::BadEdges {
                reason: format!("edges not strictly ascending: {} >= {}", w[0], w[1]),
            });
        }
    }
    if edges[0] <= 0.0 || *edges.last().unwrap() >= 1.0 {
        return Err(DifficultyError::BadEdges {
            reason: "edges must lie in (0, 1)".into(),
        });
    }

    let n = ranking.len();
    let mut bands: Vec<Vec<String>> = Vec::with_capacity(edges.len() + 1);
    let mut cursor = 0usize;
    let mut prev_edge = 0.0;
    for &edge in edges {
        let size = ceil_fraction(edge - prev_edge, n).min(n - cursor);
        bands.push(
            ranking.entries()[cursor..cursor + size]
                .iter()
                .map(|e| e.prompt_id.clone())
                .collect(),
        );
        cursor += size;
        prev_edge = edge;
    }
    bands.push(
        ranking.entries()[cursor..]
            .iter()
            .map(|e| e.prompt_id.clone())
            .collect(),
    );

    let mut band_assignments = BTreeMap::new();
    for (band_idx, members) in bands.iter().enumerate() {
        for id in members {
            band_assignments.insert(id.clone(), band_idx);
        }
    }
    Ok(DifficultyBands {
        quantile_edges: edges.to_vec(),
        band_assignments,
        bands,
    })
}

/// Stability of the difficulty estimate across two sampling budgets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetPairStability {
    pub small: u32,
    pub large: u32,
    pub spearman: f64,
    pub ks_stat: f64,
    pub ks_pvalue: f64,
}

/// Pairwise budget comparison report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Methodology header.
    pub note: String,
    pub budget_pairs: Vec<BudgetPairStability>,
}

/// For each pair of budgets, the Spearman correlation between the two
/// induced difficulty rankings and the two-sample KS test between the two
/// mean-reward distributions.
pub fn stability_report(
    samples: &[ScoredSample],
    budgets: &[u32],
) -> Result<StabilityReport, DifficultyError> {
    if budgets.is_empty() {
        return Err(DifficultyError::BadBudgets {
            reason: "no budgets given".into(),
        });
    }
    if budgets.contains(&0) {
        return Err(DifficultyError::BadBudgets {
            reason: "budgets must be >= 1".into(),
        });
    }
    let mut sorted_budgets = budgets.to_vec();
    sorted_budgets.sort_unstable();
    sorted_budgets.dedup();
    if sorted_budgets.len() != budgets.len() {
        return Err(DifficultyError::BadBudgets {
            reason: "duplicate budgets".into(),
        });
    }

    // Means per budget, keyed by prompt id (BTreeMap gives one fixed prompt
    // order shared by every budget's vector).
    let mut means_by_budget: Vec<Vec<f64>> = Vec::with_capacity(sorted_budgets.len());
    for &b in &sorted_budgets {
        let entries = compute_difficulty(samples, SampleBudget::First(b))?;
        means_by_budget.push(entries.iter().map(|e| e.mean_reward).collect());
    }

    let mut budget_pairs = Vec::new();
    for i in 0..sorted_budgets.len() {
        for j in (i + 1)..sorted_budgets.len() {
            let spearman = stats::spearman(&means_by_budget[i], &means_by_budget[j])?;
            let ks = stats::ks_two_sample(&means_by_budget[i], &means_by_budget[j])?;
            budget_pairs.push(BudgetPairStability {
                small: sorted_budgets[i],
                large: sorted_budgets[j],
                spearman,
                ks_stat: ks.statistic,
                ks_pvalue: ks.p_value,
            });
        }
    }
    Ok(StabilityReport {
        note: "KS test is the standard two-sided two-sample test on unpaired empirical \
               mean-reward distributions; p-values use the asymptotic Kolmogorov \
               distribution with effective size na*nb/(na+nb)."
            .into(),
        budget_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(pid: &str, idx: u32, reward: f64) -> ScoredSample {
        ScoredSample {
            prompt_id: pid.into(),
            sample_idx: idx,
            reward,
            text: format!("{pid}-r{idx}"),
        }
    }

    fn entry(pid: &str, mean: f64) -> DifficultyEntry {
        DifficultyEntry {
            prompt_id: pid.into(),
            mean_reward: mean,
            n: 1,
        }
    }

    #[test]
    fn constant_rewards_mean() {
        let samples = vec![sample("p", 0, 2.0), sample("p", 1, 2.0), sample("p", 2, 2.0)];
        let entries = compute_difficulty(&samples, SampleBudget::All).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].mean_reward, 2.0);
        assert_eq!(entries[0].n, 3);
    }

    #[test]
    fn budget_takes_first_samples_by_idx() {
        // Deliberately shuffled input order; idx order is 1.0, 2.0, 4.0, 5.0.
        let samples = vec![
            sample("p", 2, 4.0),
            sample("p", 0, 1.0),
            sample("p", 3, 5.0),
            sample("p", 1, 2.0),
        ];
        let entries = compute_difficulty(&samples, SampleBudget::First(2)).unwrap();
        assert_eq!(entries[0].mean_reward, 1.5);
        assert_eq!(entries[0].n, 2);
    }

    #[test]
    fn insufficient_samples_is_an_error() {
        let samples = vec![sample("p", 0, 1.0), sample("p", 1, 2.0), sample("p", 2, 3.0)];
        let err = compute_difficulty(&samples, SampleBudget::First(10)).unwrap_err();
        match err {
            DifficultyError::InsufficientSamples { have, need, .. } => {
                assert_eq!((have, need), (3, 10));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn duplicate_sample_idx_is_an_error() {
        let samples = vec![sample("p", 0, 1.0), sample("p", 0, 2.0)];
        let err = compute_difficulty(&samples, SampleBudget::All).unwrap_err();
        assert!(matches!(err, DifficultyError::DuplicateSample { .. }), "{err}");
    }

    #[test]
    fn ranking_sorts_hardest_first() {
        let entries = vec![entry("a", 3.0), entry("b", 1.0), entry("c", 2.0)];
        let ranking = rank_by_difficulty(&entries).unwrap();
        let ids: Vec<&str> = ranking.iter().map(|e| e.prompt_id.as_str()).collect();
        assert_eq!(ids, ["b", "c", "a"]);
    }

    #[test]
    fn ranking_breaks_ties_by_prompt_id() {
        let entries = vec![entry("b", 1.0), entry("a", 1.0)];
        let ranking = rank_by_difficulty(&entries).unwrap();
        let ids: Vec<&str> = ranking.iter().map(|e| e.prompt_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn ranking_rejects_duplicate_prompt() {
        let entries = vec![entry("a", 1.0), entry("a", 2.0)];
        assert!(matches!(
            rank_by_difficulty(&entries),
            Err(DifficultyError::DuplicatePrompt { .. })
        ));
    }

    #[test]
    fn ranking_agrees_with_independent_tuple_sort() {
        // Oracle: full sort of (mean_reward, prompt_id) tuples.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let entries: Vec<DifficultyEntry> = (0..1000)
            .map(|i| {
                // Coarse values force plenty of ties.
                let mean = (next() * 20.0).floor() / 2.0;
                entry(&format!("p{i:04}"), mean)
            })
            .collect();

        let mut oracle: Vec<(f64, String)> = entries
            .iter()
            .map(|e| (e.mean_reward, e.prompt_id.clone()))
            .collect();
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

        let ranking = rank_by_difficulty(&entries).unwrap();
        let got: Vec<(f64, String)> = ranking
            .iter()
            .map(|e| (e.mean_reward, e.prompt_id.clone()))
            .collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn quartile_of_eight_has_two_prompts() {
        let entries: Vec<DifficultyEntry> =
            (0..8).map(|i| entry(&format!("p{i}"), i as f64)).collect();
        let ranking = rank_by_difficulty(&entries).unwrap();
        let bands = partition_bands(&ranking, &[0.25]).unwrap();
        assert_eq!(bands.hardest(), ["p0", "p1"]);
        assert_eq!(bands.bands[1].len(), 6);
    }

    #[test]
    fn quartile_of_ten_uses_ceil() {
        let entries: Vec<DifficultyEntry> =
            (0..10).map(|i| entry(&format!("p{i}"), i as f64)).collect();
        let ranking = rank_by_difficulty(&entries).unwrap();
        let bands = partition_bands(&ranking, &[0.25]).unwrap();
        assert_eq!(bands.hardest().len(), 3); // ceil(2.5)
    }

    #[test]
    fn non_ascending_edges_rejected() {
        let ranking = rank_by_difficulty(&[entry("a", 1.0)]).unwrap();
        assert!(matches!(
            partition_bands(&ranking, &[0.5, 0.25]),
            Err(DifficultyError::BadEdges { .. })
        ));
    }

    #[test]
    fn band_sizes_sum_to_n_and_are_contiguous() {
        for n in [1usize, 2, 3, 7, 10, 97] {
            let entries: Vec<DifficultyEntry> =
                (0..n).map(|i| entry(&format!("p{i:03}"), i as f64)).collect();
            let ranking = rank_by_difficulty(&entries).unwrap();
            let bands = partition_bands(&ranking, &[0.25, 0.5, 0.75]).unwrap();
            let total: usize = bands.bands.iter().map(|b| b.len()).sum();
            assert_eq!(total, n);
            let flat: Vec<&String> = bands.bands.iter().flatten().collect();
            let expected: Vec<&String> =
                ranking.iter().map(|e| &e.prompt_id).collect();
            assert_eq!(flat, expected);
        }
    }

    #[test]
    fn ceil_fraction_handles_float_error_on_exact_multiples() {
        assert_eq!(ceil_fraction(0.3, 20), 6); // 0.3 * 20 == 6.000000000000001
        assert_eq!(ceil_fraction(0.25, 10), 3);
        assert_eq!(ceil_fraction(0.25, 8), 2);
        assert_eq!(ceil_fraction(0.0, 10), 0);
        assert_eq!(ceil_fraction(0.1, 10), 1);
    }

    #[test]
    fn noise_free_samples_give_perfect_stability() {
        let mut samples = Vec::new();
        for i in 0..12 {
            for j in 0..4 {
                samples.push(sample(&format!("p{i:02}"), j, i as f64 * 0.5));
            }
        }
        let report = stability_report(&samples, &[1, 2, 4]).unwrap();
        assert_eq!(report.budget_pairs.len(), 3);
        for pair in &report.budget_pairs {
            assert!((pair.spearman - 1.0).abs() < 1e-12);
            assert_eq!(pair.ks_stat, 0.0);
        }
    }

    #[test]
    fn constant_shift_leaves_ranking_order_unchanged() {
        let mut state = 12345u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut samples = Vec::new();
        for i in 0..30 {
            for j in 0..5 {
                samples.push(sample(&format!("p{i:02}"), j, next() * 4.0 - 2.0));
            }
        }
        let base = rank_by_difficulty(&compute_difficulty(&samples, SampleBudget::All).unwrap())
            .unwrap();
        let shifted_samples: Vec<ScoredSample> = samples
            .iter()
            .map(|s| ScoredSample {
                reward: s.reward + 17.25,
                ..s.clone()
            })
            .collect();
        let shifted =
            rank_by_difficulty(&compute_difficulty(&shifted_samples, SampleBudget::All).unwrap())
                .unwrap();
        let base_ids: Vec<&str> = base.iter().map(|e| e.prompt_id.as_str()).collect();
        let shifted_ids: Vec<&str> = shifted.iter().map(|e| e.prompt_id.as_str()).collect();
        assert_eq!(base_ids, shifted_ids);
        for (a, b) in base.iter().zip(shifted.iter()) {
            assert!((b.mean_reward - (a.mean_reward + 17.25)).abs() < 1e-9);
        }
    }
}
