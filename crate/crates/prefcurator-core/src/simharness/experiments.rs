//! End-to-end synthetic experiments over the full pipeline: world
//! generation, difficulty scoring, pair construction, curation, toy DPO
//! training, and held-out preference accuracy.
//!
//! The learnable structure: every constructed pair's truly-better response
//! carries a `+offset * q` feature component and the truly-worse one
//! `-offset * q`, where `q` is one fixed direction per world. A policy
//! generalizes to held-out prompts exactly as far as it aligns with `q`;
//! flipped training pairs push against it. Held-out pairs are oriented by
//! ground truth, so accuracy measures alignment with the true preference
//! direction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::{generate_world, sample_responses, SimError, WorldParams};
use crate::curation::{self, CurationPlan, CurationStrategy};
use crate::difficulty::{compute_difficulty, partition_bands, rank_by_difficulty, SampleBudget};
use crate::dpo::{
    eval_preference_accuracy, train, DpoConfig, EncodedPair, SharedFeatures, TableFeatures,
    ToyPolicy,
};
use crate::hashing::{stable_hash, unit_from_hash};
use crate::pairs::{build_dataset, PairStrategy};
use crate::records::{DifficultyRanking, PreferencePair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Hardest-quartile training vs an equal-size easier subset.
    QuartileGap,
    /// Full set vs the set without its hardest quartile.
    DropHardest,
    /// The quartile gap across increasing capacity levels.
    CapacityGap,
    /// Held-out accuracy across prune-hardest k values.
    KSweep,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::QuartileGap => "quartile_gap",
            Experiment::DropHardest => "drop_hardest",
            Experiment::CapacityGap => "capacity_gap",
            Experiment::KSweep => "k_sweep",
        }
    }
}

/// Toy-DPO settings for experiment arms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyTrainParams {
    pub dim: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub epochs: u32,
    /// Scale of the per-response feature noise (uniform in [-scale, scale]).
    pub feature_noise: f64,
    /// Magnitude of the quality-direction offset carried by pair members.
    pub quality_offset: f64,
}

impl Default for ToyTrainParams {
    fn default() -> Self {
        Self {
            dim: 128,
            learning_rate: 0.03,
            beta: 1.0,
            epochs: 1,
            feature_noise: 1.0,
            quality_offset: 0.3,
        }
    }
}

/// Experiment parameters; the defaults are the reference noise coupling.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentParams {
    pub n_train_prompts: usize,
    pub n_heldout_prompts: usize,
    pub samples_per_prompt: u32,
    pub capacity: f64,
    pub noise_sigma: f64,
    pub label_noise_slope: f64,
    pub difficulty_gain: f64,
    /// Hardest-band fraction for the quartile experiments.
    pub quartile: f64,
    pub seeds: u32,
    pub base_seed: u64,
    /// Prune fractions for `KSweep`.
    pub k_values: Vec<f64>,
    /// Capacity levels for `CapacityGap`, ascending.
    pub capacity_levels: Vec<f64>,
    pub dpo: ToyTrainParams,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            n_train_prompts: 400,
            n_heldout_prompts: 300,
            samples_per_prompt: 5,
            capacity: 1.0,
            noise_sigma: 1.0,
            label_noise_slope: 0.6,
            difficulty_gain: 4.0,
            quartile: 0.25,
            seeds: 20,
            base_seed: 17,
            k_values: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            capacity_levels: vec![1.0, 1.25, 1.5, 2.0],
            dpo: ToyTrainParams::default(),
        }
    }
}

/// One arm's per-seed metric values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ArmReport {
    fn from_values(name: String, per_seed: Vec<f64>) -> Self {
        let n = per_seed.len().max(1) as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let var = per_seed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            name,
            per_seed,
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub params: ExperimentParams,
    pub arms: Vec<ArmReport>,
    pub summary: BTreeMap<String, f64>,
}

/// One seed's fully-built pipeline state, ready to train arms on.
struct SeedInstance {
    ranking: DifficultyRanking,
    train_pairs: Vec<PreferencePair>,
    encoded_by_prompt: HashMap<String, EncodedPair>,
    heldout: Vec<EncodedPair>,
    features: SharedFeatures<f64>,
}

fn unit_direction(seed: u64, dim: usize) -> Vec<f64> {
    let mut q: Vec<f64> = (0..dim)
        .map(|k| unit_from_hash(stable_hash(&[seed.into(), "qdir".into(), k.into()])) * 2.0 - 1.0)
        .collect();
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in q.iter_mut() {
        *v /= norm;
    }
    q
}

fn build_instance(
    params: &ExperimentParams,
    seed_index: u32,
    capacity: f64,
) -> Result<SeedInstance, SimError> {
    let world_seed = stable_hash(&[params.base_seed.into(), "world".into(), seed_index.into()]);
    let n_total = params.n_train_prompts + params.n_heldout_prompts;
    let world = generate_world(WorldParams {
        n_prompts: n_total,
        capacity,
        difficulty_gain: params.difficulty_gain,
        noise_sigma: params.noise_sigma,
        label_noise_slope: params.label_noise_slope,
        seed: world_seed,
    })?;
    let sampled = sample_responses(&world, params.samples_per_prompt);

    let is_train = |id: &str| {
        world
            .prompt_index(id)
            .map(|i| i < params.n_train_prompts)
            .unwrap_or(false)
    };
    let train_samples: Vec<_> = sampled
        .samples
        .iter()
        .filter(|s| is_train(&s.prompt_id))
        .cloned()
        .collect();
    let heldout_samples: Vec<_> = sampled
        .samples
        .iter()
        .filter(|s| !is_train(&s.prompt_id))
        .cloned()
        .collect();

    let ranking = rank_by_difficulty(&compute_difficulty(&train_samples, SampleBudget::All)?)?;
    let heldout_ranking =
        rank_by_difficulty(&compute_difficulty(&heldout_samples, SampleBudget::All)?)?;

    let strategy = PairStrategy {
        base_budget: params.samples_per_prompt,
        ..Default::default()
    };
    let train_dataset = build_dataset(&train_samples, &ranking, &strategy, None)?;
    let heldout_dataset = build_dataset(&heldout_samples, &heldout_ranking, &strategy, None)?;

    // Response text -> sample index, for mapping pairs back to the encoding.
    let sample_index_of: HashMap<&str, usize> = sampled
        .samples
        .iter()
        .map(|s| (s.text.as_str(), s.sample_idx as usize))
        .collect();

    let dim = params.dpo.dim;
    let m = params.samples_per_prompt as usize;
    let q = unit_direction(world_seed, dim);
    let noise = params.dpo.feature_noise;
    let offset = params.dpo.quality_offset;
    let mut table = TableFeatures::<f64>::new(dim, m);
    let mut encoded_by_prompt = HashMap::new();
    let mut heldout = Vec::new();

    let mut encode = |pair: &PreferencePair, flipped: bool| -> (EncodedPair, EncodedPair) {
        let prompt_idx = world.prompt_index(&pair.prompt_id).expect("world prompt id");
        let winner = sample_index_of[pair.chosen_text.as_str()];
        let loser = sample_index_of[pair.rejected_text.as_str()];
        let (truly_better, truly_worse) = if flipped { (loser, winner) } else { (winner, loser) };
        for response in 0..m {
            let mut vec: Vec<f64> = (0..dim)
                .map(|k| {
                    let h = stable_hash(&[
                        world_seed.into(),
                        "feat".into(),
                        prompt_idx.into(),
                        response.into(),
                        k.into(),
                    ]);
                    (unit_from_hash(h) * 2.0 - 1.0) * noise
                })
                .collect();
            if response == truly_better {
                for (v, qk) in vec.iter_mut().zip(&q) {
                    *v += offset * qk;
                }
            } else if response == truly_worse {
                for (v, qk) in vec.iter_mut().zip(&q) {
                    *v -= offset * qk;
                }
            }
            table.insert(prompt_idx as u64, response, vec);
        }
        let observed = EncodedPair {
            context: prompt_idx as u64,
            winner,
            loser,
        };
        let truth = EncodedPair {
            context: prompt_idx as u64,
            winner: truly_better,
            loser: truly_worse,
        };
        (observed, truth)
    };

    for pair in &train_dataset.pairs {
        let idx = world.prompt_index(&pair.prompt_id).expect("world prompt id");
        let (observed, _) = encode(pair, sampled.flipped[idx]);
        encoded_by_prompt.insert(pair.prompt_id.clone(), observed);
    }
    for pair in &heldout_dataset.pairs {
        let idx = world.prompt_index(&pair.prompt_id).expect("world prompt id");
        let (_, truth) = encode(pair, sampled.flipped[idx]);
        heldout.push(truth);
    }

    Ok(SeedInstance {
        ranking,
        train_pairs: train_dataset.pairs,
        encoded_by_prompt,
        heldout,
        features: Arc::new(table),
    })
}

impl SeedInstance {
    /// Encoded training pairs for the given prompt ids, in the given order;
    /// prompts whose pair was skipped are dropped.
    fn encoded_for(&self, prompt_ids: &[String]) -> Vec<EncodedPair> {
        prompt_ids
            .iter()
            .filter_map(|id| self.encoded_by_prompt.get(id).copied())
            .collect()
    }

    fn encode_curated(&self, curated: &[PreferencePair]) -> Vec<EncodedPair> {
        curated
            .iter()
            .filter_map(|p| self.encoded_by_prompt.get(&p.prompt_id).copied())
            .collect()
    }

    /// Trains a zero-initialized policy on the pairs in the given order and
    /// returns held-out preference accuracy.
    fn run_arm(&self, ordered: &[EncodedPair], dpo: &ToyTrainParams) -> Result<f64, SimError> {
        let reference = ToyPolicy::<f64>::new(Arc::clone(&self.features));
        let policy = ToyPolicy::new(Arc::clone(&self.features));
        let config = DpoConfig {
            beta: dpo.beta,
            learning_rate: dpo.learning_rate,
            warmup_fraction: 0.1,
            epochs: dpo.epochs,
            seed: 0,
        };
        let outcome =
            train(policy, &reference, ordered, &config).map_err(|e| SimError::Train(e.to_string()))?;
        Ok(eval_preference_accuracy(
            &outcome.policy,
            &reference,
            &self.heldout,
            dpo.beta,
        )?)
    }
}

fn shuffled(pairs: Vec<EncodedPair>, seed: u64) -> Vec<EncodedPair> {
    let mut pairs = pairs;
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pairs
}

/// Hardest-quartile arm vs an equal-size seeded draw from the easier rest.
/// Returns (hard accuracy, easy accuracy).
fn quartile_gap_for_seed(
    params: &ExperimentParams,
    seed_index: u32,
    capacity: f64,
) -> Result<(f64, f64), SimError> {
    let instance = build_instance(params, seed_index, capacity)?;
    let bands = partition_bands(&instance.ranking, &[params.quartile])?;
    let hard_ids: Vec<String> = bands.hardest().to_vec();
    let hard_set: HashSet<&String> = hard_ids.iter().collect();
    let pool: Vec<String> = instance
        .ranking
        .iter()
        .map(|e| e.prompt_id.clone())
        .filter(|id| !hard_set.contains(id))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[
        params.base_seed.into(),
        "easy-subset".into(),
        seed_index.into(),
        capacity.to_bits().into(),
    ]));
    let picked = rand::seq::index::sample(&mut rng, pool.len(), hard_ids.len().min(pool.len()));
    let easy_ids: Vec<String> = picked.iter().map(|i| pool[i].clone()).collect();

    let shuffle_base = stable_hash(&[
        params.base_seed.into(),
        "arm-shuffle".into(),
        seed_index.into(),
        capacity.to_bits().into(),
    ]);
    let hard_acc = instance.run_arm(
        &shuffled(instance.encoded_for(&hard_ids), shuffle_base ^ 1),
        &params.dpo,
    )?;
    let easy_acc = instance.run_arm(
        &shuffled(instance.encoded_for(&easy_ids), shuffle_base ^ 2),
        &params.dpo,
    )?;
    Ok((hard_acc, easy_acc))
}

/// Runs one of the paper-shaped experiments and reports per-seed metrics.
pub fn run_paper_experiment(
    experiment: Experiment,
    params: &ExperimentParams,
) -> Result<ExperimentReport, SimError> {
    validate_params(params)?;
    let mut arms = Vec::new();
    let mut summary = BTreeMap::new();

    match experiment {
        Experiment::QuartileGap => {
            let mut hard = Vec::new();
            let mut easy = Vec::new();
            for seed in 0..params.seeds {
                let (h, e) = quartile_gap_for_seed(params, seed, params.capacity)?;
                hard.push(h);
                easy.push(e);
            }
            let below = hard.iter().zip(&easy).filter(|(h, e)| h < e).count();
            summary.insert(
                "fraction_hard_below_easy".into(),
                below as f64 / params.seeds as f64,
            );
            let gap = ArmReport::from_values(
                "gap".into(),
                easy.iter().zip(&hard).map(|(e, h)| e - h).collect(),
            );
            summary.insert("mean_gap".into(), gap.mean);
            arms.push(ArmReport::from_values("hardest_quartile".into(), hard));
            arms.push(ArmReport::from_values("easier_subset".into(), easy));
            arms.push(gap);
        }
        Experiment::DropHardest => {
            let mut full = Vec::new();
            let mut dropped = Vec::new();
            for seed in 0..params.seeds {
                let instance = build_instance(params, seed, params.capacity)?;
                let order_seed = stable_hash(&[
                    params.base_seed.into(),
                    "curate".into(),
                    seed.into(),
                ]);
                let full_curated = curation::curate(
                    &instance.train_pairs,
                    &instance.ranking,
                    &CurationPlan::new(CurationStrategy::Full, 0.0, order_seed),
                )?;
                let drop_curated = curation::curate(
                    &instance.train_pairs,
                    &instance.ranking,
                    &CurationPlan::new(CurationStrategy::PruneHardest, params.quartile, order_seed),
                )?;
                full.push(
                    instance.run_arm(&instance.encode_curated(&full_curated), &params.dpo)?,
                );
                dropped.push(
                    instance.run_arm(&instance.encode_curated(&drop_curated), &params.dpo)?,
                );
            }
            let gap = ArmReport::from_values(
                "gap".into(),
                dropped.iter().zip(&full).map(|(d, f)| d - f).collect(),
            );
            summary.insert("mean_full".into(), mean(&full));
            summary.insert("mean_drop_hardest".into(), mean(&dropped));
            summary.insert("mean_gap".into(), gap.mean);
            arms.push(ArmReport::from_values("full_set".into(), full));
            arms.push(ArmReport::from_values("drop_hardest_quartile".into(), dropped));
            arms.push(gap);
        }
        Experiment::CapacityGap => {
            for (level_idx, &capacity) in params.capacity_levels.iter().enumerate() {
                let mut hard = Vec::new();
                let mut easy = Vec::new();
                for seed in 0..params.seeds {
                    let (h, e) = quartile_gap_for_seed(params, seed, capacity)?;
                    hard.push(h);
                    easy.push(e);
                }
                let gap = ArmReport::from_values(
                    format!("gap[capacity={capacity:?}]"),
                    easy.iter().zip(&hard).map(|(e, h)| e - h).collect(),
                );
                if level_idx == 0 {
                    summary.insert("gap_at_lowest_capacity".into(), gap.mean);
                }
                if level_idx == params.capacity_levels.len() - 1 {
                    summary.insert("gap_at_highest_capacity".into(), gap.mean);
                }
                arms.push(ArmReport::from_values(
                    format!("hardest_quartile[capacity={capacity:?}]"),
                    hard,
                ));
                arms.push(ArmReport::from_values(
                    format!("easier_subset[capacity={capacity:?}]"),
                    easy,
                ));
                arms.push(gap);
            }
        }
        Experiment::KSweep => {
            let mut per_k: Vec<Vec<f64>> = vec![Vec::new(); params.k_values.len()];
            for seed in 0..params.seeds {
                let instance = build_instance(params, seed, params.capacity)?;
                let sweep_seed = stable_hash(&[
                    params.base_seed.into(),
                    "sweep".into(),
                    seed.into(),
                ]);
                let report = curation::sweep(
                    &instance.train_pairs,
                    &instance.ranking,
                    &params.k_values,
                    sweep_seed,
                    |_, curated| {
                        instance
                            .run_arm(&instance.encode_curated(curated), &params.dpo)
                            .map_err(|e| e.to_string())
                    },
                )?;
                for (slot, cell) in per_k.iter_mut().zip(&report.cells) {
                    match cell.metric {
                        Some(metric) => slot.push(metric),
                        None => return Err(SimError::Train(cell.status.clone())),
                    }
                }
            }
            let mut best = (0usize, f64::MIN);
            for (i, values) in per_k.iter().enumerate() {
                let m = mean(values);
                if m > best.1 {
                    best = (i, m);
                }
                arms.push(ArmReport::from_values(
                    format!("k={:?}", params.k_values[i]),
                    values.clone(),
                ));
            }
            summary.insert("argmax_k".into(), params.k_values[best.0]);
            summary.insert("max_mean_metric".into(), best.1);
        }
    }

    Ok(ExperimentReport {
        experiment: experiment.name().to_string(),
        params: params.clone(),
        arms,
        summary,
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

fn validate_params(params: &ExperimentParams) -> Result<(), SimError> {
    if params.n_train_prompts < 8 || params.n_heldout_prompts < 8 {
        return Err(SimError::BadParams {
            reason: "need at least 8 train and 8 held-out prompts".into(),
        });
    }
    if params.seeds == 0 {
        return Err(SimError::BadParams {
            reason: "seeds must be >= 1".into(),
        });
    }
    if !(params.quartile > 0.0 && params.quartile < 1.0) {
        return Err(SimError::BadParams {
            reason: format!("quartile {} outside (0, 1)", params.quartile),
        });
    }
    if params.capacity_levels.is_empty() || params.k_values.is_empty() {
        return Err(SimError::BadParams {
            reason: "capacity_levels and k_values must be non-empty".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_params() -> ExperimentParams {
        ExperimentParams {
            n_train_prompts: 120,
            n_heldout_prompts: 80,
            seeds: 4,
            ..Default::default()
        }
    }

    #[test]
    fn reports_are_deterministic() {
        let params = ExperimentParams {
            seeds: 2,
            n_train_prompts: 60,
            n_heldout_prompts: 40,
            ..Default::default()
        };
        let a = run_paper_experiment(Experiment::QuartileGap, &params).unwrap();
        let b = run_paper_experiment(Experiment::QuartileGap, &params).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn quartile_gap_direction_quick() {
        let report = run_paper_experiment(Experiment::QuartileGap, &quick_params()).unwrap();
        assert!(
            report.summary["fraction_hard_below_easy"] >= 0.75,
            "summary: {:?}",
            report.summary
        );
    }

    #[test]
    fn no_label_noise_means_no_gap() {
        let params = ExperimentParams {
            label_noise_slope: 0.0,
            seeds: 8,
            n_train_prompts: 120,
            n_heldout_prompts: 120,
            ..Default::default()
        };
        let report = run_paper_experiment(Experiment::QuartileGap, &params).unwrap();
        assert!(
            report.summary["mean_gap"].abs() < 0.03,
            "gap {} should sit inside the Monte Carlo noise band",
            report.summary["mean_gap"]
        );
    }

    #[test]
    fn bad_params_rejected() {
        let params = ExperimentParams {
            n_train_prompts: 2,
            ..Default::default()
        };
        assert!(matches!(
            run_paper_experiment(Experiment::QuartileGap, &params),
            Err(SimError::BadParams { .. })
        ));
    }
}
