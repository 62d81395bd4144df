//! Reward scoring gateway: a remote scoring service over a JSON wire
//! protocol, plus local synthetic scorers for testing and simulation.
//!
//! Wire protocol: `POST {endpoint}/v1/score` with body
//! `{"items":[{"prompt":...,"response":...}]}`, response
//! `{"rewards":[...]}` positionally aligned, HTTP 200 only on full success.
//! Requests are chunked at 64 items; chunks run concurrently up to
//! `max_in_flight` and are re-spliced in input order. Retries resend the
//! original request bytes unchanged (the service must be idempotent) with
//! exponential backoff: base 250 ms, factor 2, full jitter. A NaN or
//! infinite reward is a protocol violation, not a retryable failure.

pub mod stub;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::hashing::{stable_hash, unit_from_hash};
use crate::records::ScoredSample;

pub const CHUNK_SIZE: usize = 64;
pub const BACKOFF_BASE_MS: u64 = 250;

/// Environment variable carrying the bearer token for remote scoring.
pub const SCORE_TOKEN_ENV: &str = "PREFCURATOR_SCORE_TOKEN";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("empty input")]
    EmptyInput,
    #[error("duplicate item key ({prompt_id}, {sample_idx})")]
    DuplicateKey { prompt_id: String, sample_idx: u32 },
    #[error("invalid scorer spec: {reason}")]
    InvalidSpec { reason: String },
    #[error("scoring failed for {} item(s), first key ({}, {}): {last_error}", keys.len(), keys[0].0, keys[0].1)]
    ScoringFailed {
        keys: Vec<(String, u32)>,
        last_error: String,
    },
    #[error("remote returned a non-finite reward for ({prompt_id}, {sample_idx})")]
    NonFiniteReward { prompt_id: String, sample_idx: u32 },
}

/// Scorer backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerKind {
    /// Remote scoring service. The bearer token, if any, comes from the
    /// `PREFCURATOR_SCORE_TOKEN` environment variable, never from config.
    Remote { endpoint: String },
    /// Latent-difficulty synthetic scorer: a hash of the prompt id fixes a
    /// difficulty in [0, 1); rewards are `capacity - gain * difficulty`
    /// plus Gaussian noise. Mirrors the simulation harness reward model.
    SynthLatent {
        seed: u64,
        capacity: f64,
        noise_sigma: f64,
        difficulty_gain: f64,
    },
    /// Pure hash of (prompt_id, sample_idx, seed); for plumbing tests only.
    SynthFixed { seed: u64 },
}

/// Scorer configuration: backend plus transport limits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScorerSpec {
    #[serde(flatten)]
    pub kind: ScorerKind,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub timeout_ms: u64,
}

impl ScorerSpec {
    pub fn new(kind: ScorerKind) -> Self {
        Self {
            kind,
            max_in_flight: 4,
            max_retries: 3,
            timeout_ms: 30_000,
        }
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight == 0 {
            return Err(GatewayError::InvalidSpec {
                reason: "max_in_flight must be >= 1".into(),
            });
        }
        if let ScorerKind::Remote { endpoint } = &self.kind {
            if endpoint.is_empty() {
                return Err(GatewayError::InvalidSpec {
                    reason: "remote scorer requires an endpoint".into(),
                });
            }
        }
        Ok(())
    }
}

/// One item to score.
#[derive(Debug, Clone)]
pub struct ScoreItem {
    pub prompt_id: String,
    pub sample_idx: u32,
    pub prompt: String,
    pub response: String,
}

#[derive(Serialize)]
struct WireItem<'a> {
    prompt: &'a str,
    response: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    items: Vec<WireItem<'a>>,
}

#[derive(Deserialize)]
struct WireResponse {
    rewards: Vec<f64>,
}

/// Scores a batch of items. Output order matches input order regardless of
/// completion order; synthetic scorers are deterministic given their seed.
pub fn score_batch(
    spec: &ScorerSpec,
    items: &[ScoreItem],
) -> Result<Vec<ScoredSample>, GatewayError> {
    spec.validate()?;
    if items.is_empty() {
        return Err(GatewayError::EmptyInput);
    }
    let mut seen = std::collections::HashSet::new();
    for item in items {
        if !seen.insert((item.prompt_id.as_str(), item.sample_idx)) {
            return Err(GatewayError::DuplicateKey {
                prompt_id: item.prompt_id.clone(),
                sample_idx: item.sample_idx,
            });
        }
    }

    let rewards = match &spec.kind {
        ScorerKind::SynthFixed { seed } => items
            .iter()
            .map(|item| {
                let h = stable_hash(&[
                    (*seed).into(),
                    item.prompt_id.as_str().into(),
                    item.sample_idx.into(),
                ]);
                unit_from_hash(h) * 2.0 - 1.0
            })
            .collect(),
        ScorerKind::SynthLatent {
            seed,
            capacity,
            noise_sigma,
            difficulty_gain,
        } => items
            .iter()
            .map(|item| {
                let difficulty = unit_from_hash(stable_hash(&[
                    (*seed).into(),
                    "difficulty".into(),
                    item.prompt_id.as_str().into(),
                ]));
                let mean = capacity - difficulty_gain * difficulty;
                let noise_hash = stable_hash(&[
                    (*seed).into(),
                    "noise".into(),
                    item.prompt_id.as_str().into(),
                    item.sample_idx.into(),
                ]);
                mean + noise_sigma * standard_normal_from_hash(noise_hash)
            })
            .collect(),
        ScorerKind::Remote { endpoint } => {
            score_remote(endpoint, spec, items)?
        }
    };

    Ok(items
        .iter()
        .zip(rewards)
        .map(|(item, reward)| ScoredSample {
            prompt_id: item.prompt_id.clone(),
            sample_idx: item.sample_idx,
            reward,
            text: item.response.clone(),
        })
        .collect())
}

/// Deterministic standard normal draw keyed by a hash.
fn standard_normal_from_hash(hash: u64) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(hash);
    Normal::new(0.0, 1.0).unwrap().sample(&mut rng)
}

enum ChunkFailure {
    Exhausted { last_error: String },
    NonFinite { offset: usize },
}

fn score_remote(
    endpoint: &str,
    spec: &ScorerSpec,
    items: &[ScoreItem],
) -> Result<Vec<f64>, GatewayError> {
    let url = format!("{}/v1/score", endpoint.trim_end_matches('/'));
    let token = std::env::var(SCORE_TOKEN_ENV).ok();
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(spec.timeout_ms))
        .build()
        .map_err(|e| GatewayError::InvalidSpec {
            reason: format!("http client: {e}"),
        })?;

    let chunks: Vec<&[ScoreItem]> = items.chunks(CHUNK_SIZE).collect();
    // Serialize each chunk body exactly once; retries resend these bytes.
    let bodies: Vec<String> = chunks
        .iter()
        .map(|chunk| {
            let request = WireRequest {
                items: chunk
                    .iter()
                    .map(|item| WireItem {
                        prompt: &item.prompt,
                        response: &item.response,
                    })
                    .collect(),
            };
            serde_json::to_string(&request).expect("wire request serialization")
        })
        .collect();

    let results: Mutex<Vec<Option<Result<Vec<f64>, ChunkFailure>>>> =
        Mutex::new((0..chunks.len()).map(|_| None).collect());
    let next_chunk = AtomicUsize::new(0);
    let workers = spec.max_in_flight.min(chunks.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next_chunk.fetch_add(1, Ordering::SeqCst);
                if idx >= chunks.len() {
                    break;
                }
                let outcome = fetch_chunk(
                    &client,
                    &url,
                    token.as_deref(),
                    &bodies[idx],
                    chunks[idx].len(),
                    spec.max_retries,
                );
                results.lock().unwrap()[idx] = Some(outcome);
            });
        }
    });

    let results = results.into_inner().unwrap();
    let mut rewards = Vec::with_capacity(items.len());
    let mut failed_keys: Vec<(String, u32)> = Vec::new();
    let mut last_error = String::new();
    for (idx, outcome) in results.into_iter().enumerate() {
        match outcome.expect("every chunk visited") {
            Ok(chunk_rewards) => rewards.extend(chunk_rewards),
            Err(ChunkFailure::NonFinite { offset }) => {
                let item = &chunks[idx][offset];
                return Err(GatewayError::NonFiniteReward {
                    prompt_id: item.prompt_id.clone(),
                    sample_idx: item.sample_idx,
                });
            }
            Err(ChunkFailure::Exhausted { last_error: e }) => {
                failed_keys.extend(
                    chunks[idx]
                        .iter()
                        .map(|item| (item.prompt_id.clone(), item.sample_idx)),
                );
                last_error = e;
            }
        }
    }
    if !failed_keys.is_empty() {
        return Err(GatewayError::ScoringFailed {
            keys: failed_keys,
            last_error,
        });
    }
    Ok(rewards)
}

fn fetch_chunk(
    client: &reqwest::blocking::Client,
    url: &str,
    token: Option<&str>,
    body: &str,
    expected_len: usize,
    max_retries: u32,
) -> Result<Vec<f64>, ChunkFailure> {
    let mut last_error = String::from("no attempts made");
    for attempt in 0..=max_retries {
        if attempt > 0 {
            // Full jitter: uniform in [0, base * 2^(attempt-1)].
            let cap = BACKOFF_BASE_MS.saturating_mul(1 << (attempt - 1).min(16));
            let delay = rand::rng().random_range(0..=cap);
            std::thread::sleep(Duration::from_millis(delay));
        }
        let mut request = client
            .post(url)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(token) = token {
            request = request.bearer_auth(token);
        }
        match request.send() {
            Ok(response) => {
                let status = response.status();
                if !status.is_success() {
                    last_error = format!("http status {status}");
                    continue;
                }
                let text = match response.text() {
                    Ok(t) => t,
                    Err(e) => {
                        last_error = format!("read body: {e}");
                        continue;
                    }
                };
                match serde_json::from_str::<WireResponse>(&text) {
                    Ok(parsed) => {
                        if parsed.rewards.len() != expected_len {
                            last_error = format!(
                                "protocol violation: {} rewards for {} items",
                                parsed.rewards.len(),
                                expected_len
                            );
                            continue;
                        }
                        if let Some(offset) =
                            parsed.rewards.iter().position(|r| !r.is_finite())
                        {
                            return Err(ChunkFailure::NonFinite { offset });
                        }
                        return Ok(parsed.rewards);
                    }
                    Err(e) => {
                        last_error = format!("parse response: {e}");
                        continue;
                    }
                }
            }
            Err(e) => {
                last_error = format!("transport: {e}");
                continue;
            }
        }
    }
    Err(ChunkFailure::Exhausted { last_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(n: usize) -> Vec<ScoreItem> {
        (0..n)
            .map(|i| ScoreItem {
                prompt_id: format!("p{:03}", i / 5),
                sample_idx: (i % 5) as u32,
                prompt: format!("prompt {}", i / 5),
                response: format!("response {i}"),
            })
            .collect()
    }

    #[test]
    fn synth_fixed_is_deterministic() {
        let spec = ScorerSpec::new(ScorerKind::SynthFixed { seed: 42 });
        let batch = items(25);
        let a = score_batch(&spec, &batch).unwrap();
        let b = score_batch(&spec, &batch).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.reward.is_finite()));

        let other_seed = ScorerSpec::new(ScorerKind::SynthFixed { seed: 43 });
        let c = score_batch(&other_seed, &batch).unwrap();
        assert_ne!(a.iter().map(|s| s.reward).collect::<Vec<_>>(),
                   c.iter().map(|s| s.reward).collect::<Vec<_>>());
    }

    #[test]
    fn synth_latent_orders_by_hidden_difficulty() {
        let spec = ScorerSpec::new(ScorerKind::SynthLatent {
            seed: 7,
            capacity: 1.0,
            noise_sigma: 0.0,
            difficulty_gain: 1.0,
        });
        let scored = score_batch(&spec, &items(50)).unwrap();
        // Noise-free: every sample of a prompt carries exactly its mean.
        for pair in scored.chunks(5) {
            assert!(pair.windows(2).all(|w| w[0].reward == w[1].reward));
        }
    }

    #[test]
    fn preserves_input_order_and_keys() {
        let spec = ScorerSpec::new(ScorerKind::SynthFixed { seed: 1 });
        let batch = items(12);
        let scored = score_batch(&spec, &batch).unwrap();
        assert_eq!(scored.len(), batch.len());
        for (item, sample) in batch.iter().zip(&scored) {
            assert_eq!(item.prompt_id, sample.prompt_id);
            assert_eq!(item.sample_idx, sample.sample_idx);
            assert_eq!(item.response, sample.text);
        }
    }

    #[test]
    fn duplicate_keys_rejected() {
        let spec = ScorerSpec::new(ScorerKind::SynthFixed { seed: 1 });
        let mut batch = items(4);
        batch[3].prompt_id = batch[0].prompt_id.clone();
        batch[3].sample_idx = batch[0].sample_idx;
        assert!(matches!(
            score_batch(&spec, &batch),
            Err(GatewayError::DuplicateKey { .. })
        ));
    }

    #[test]
    fn empty_input_rejected() {
        let spec = ScorerSpec::new(ScorerKind::SynthFixed { seed: 1 });
        assert!(matches!(
            score_batch(&spec, &[]),
            Err(GatewayError::EmptyInput)
        ));
    }
}
