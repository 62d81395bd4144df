//! Shared record types and their line-delimited JSON form.
//!
//! Every dataset file is UTF-8, one JSON object per line, LF line endings,
//! keys in the declared field order, floats in shortest round-trip form.
//! Readers are fail-fast: a single malformed line rejects the whole file so
//! curation decisions stay reproducible.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Errors from reading, writing, or validating dataset records.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}:{line}: malformed {kind} record: {msg}")]
    MalformedLine {
        path: String,
        line: usize,
        kind: &'static str,
        msg: String,
    },
    #[error("{path}:{line}: duplicate key {key}")]
    DuplicateKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("record {index} violates {kind} invariant: {msg}")]
    InvalidRecord {
        index: usize,
        kind: &'static str,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A record type with a JSONL serialization, per-record invariants, and an
/// optional uniqueness key enforced per file.
pub trait Record: Serialize + DeserializeOwned {
    const KIND: &'static str;

    /// Checks the type invariants; `Err` carries a human-readable reason.
    fn validate(&self) -> Result<(), String>;

    /// Key that must be unique within one dataset file, if any.
    fn dedup_key(&self) -> Option<String> {
        None
    }
}

/// A prompt, the unit of curation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
}

impl Record for PromptRecord {
    const KIND: &'static str = "prompt";

    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("id is empty".into());
        }
        if self.text.is_empty() {
            return Err("text is empty".into());
        }
        Ok(())
    }

    fn dedup_key(&self) -> Option<String> {
        Some(self.id.clone())
    }
}

/// An unscored candidate response (the `samples.jsonl` schema).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSample {
    pub prompt_id: String,
    pub sample_idx: u32,
    pub text: String,
}

impl Record for CandidateSample {
    const KIND: &'static str = "sample";

    fn validate(&self) -> Result<(), String> {
        if self.prompt_id.is_empty() {
            return Err("prompt_id is empty".into());
        }
        Ok(())
    }

    fn dedup_key(&self) -> Option<String> {
        Some(format!("({}, {})", self.prompt_id, self.sample_idx))
    }
}

/// One sampled response with its scalar reward (the `rewards.jsonl` schema).
/// The response text is carried when known and omitted from the serialized
/// form when empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub prompt_id: String,
    pub sample_idx: u32,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
}

impl Record for ScoredSample {
    const KIND: &'static str = "scored sample";

    fn validate(&self) -> Result<(), String> {
        if self.prompt_id.is_empty() {
            return Err("prompt_id is empty".into());
        }
        if !self.reward.is_finite() {
            return Err(format!("reward {} is not finite", self.reward));
        }
        Ok(())
    }

    fn dedup_key(&self) -> Option<String> {
        Some(format!("({}, {})", self.prompt_id, self.sample_idx))
    }
}

/// Per-prompt mean reward, the ranking key. Lower mean = harder prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyEntry {
    pub prompt_id: String,
    pub mean_reward: f64,
    pub n: u32,
}

impl Record for DifficultyEntry {
    const KIND: &'static str = "difficulty entry";

    fn validate(&self) -> Result<(), String> {
        if self.prompt_id.is_empty() {
            return Err("prompt_id is empty".into());
        }
        if !self.mean_reward.is_finite() {
            return Err(format!("mean_reward {} is not finite", self.mean_reward));
        }
        if self.n == 0 {
            return Err("n must be >= 1".into());
        }
        Ok(())
    }

    fn dedup_key(&self) -> Option<String> {
        Some(self.prompt_id.clone())
    }
}

/// Where a pair's chosen response came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChosenSource {
    Policy,
    ExtendedBudget,
    External,
}

/// A chosen/rejected response pair, the DPO training unit
/// (the `pairs.jsonl` schema).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: String,
    #[serde(rename = "chosen")]
    pub chosen_text: String,
    #[serde(rename = "rejected")]
    pub rejected_text: String,
    pub chosen_reward: f64,
    pub rejected_reward: f64,
    pub chosen_source: ChosenSource,
}

impl Record for PreferencePair {
    const KIND: &'static str = "preference pair";

    fn validate(&self) -> Result<(), String> {
        if self.prompt_id.is_empty() {
            return Err("prompt_id is empty".into());
        }
        if !self.chosen_reward.is_finite() || !self.rejected_reward.is_finite() {
            return Err("rewards must be finite".into());
        }
        if self.chosen_reward < self.rejected_reward {
            return Err(format!(
                "chosen_reward {} < rejected_reward {}",
                self.chosen_reward, self.rejected_reward
            ));
        }
        if self.chosen_text == self.rejected_text {
            return Err("chosen and rejected texts are identical".into());
        }
        Ok(())
    }
}

/// Why a prompt produced no preference pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SkipReason {
    /// All rewards in the budget window are equal; a zero-margin pair is useless.
    DegenerateRewards,
    /// Max- and min-reward samples carry the same text.
    IdenticalText,
    /// The best external chosen response scores below the policy minimum.
    ExternalWorse,
}

/// One skipped prompt with its reason (the `skips.jsonl` schema).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub prompt_id: String,
    pub reason: SkipReason,
}

impl Record for SkipRecord {
    const KIND: &'static str = "skip";

    fn validate(&self) -> Result<(), String> {
        if self.prompt_id.is_empty() {
            return Err("prompt_id is empty".into());
        }
        Ok(())
    }
}

/// Difficulty entries sorted hardest-first: ascending mean reward, ties
/// broken by ascending prompt id. Each prompt appears exactly once.
///
/// Construct via [`crate::difficulty::rank_by_difficulty`].
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyRanking {
    entries: Vec<DifficultyEntry>,
}

impl DifficultyRanking {
    /// Wraps pre-sorted, deduplicated entries. Callers must uphold the
    /// ordering invariant; `rank_by_difficulty` is the checked path.
    pub(crate) fn from_sorted_unchecked(entries: Vec<DifficultyEntry>) -> Self {
        debug_assert!(entries.windows(2).all(|w| {
            (w[0].mean_reward, w[0].prompt_id.as_str())
                < (w[1].mean_reward, w[1].prompt_id.as_str())
        }));
        Self { entries }
    }

    pub fn entries(&self) -> &[DifficultyEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DifficultyEntry> {
        self.entries.iter()
    }

    /// Keeps only the entries whose prompt id satisfies the predicate,
    /// preserving order (which preserves the sorting invariant).
    pub fn filtered<F: Fn(&str) -> bool>(&self, keep: F) -> DifficultyRanking {
        DifficultyRanking {
            entries: self
                .entries
                .iter()
                .filter(|e| keep(&e.prompt_id))
                .cloned()
                .collect(),
        }
    }

    pub fn into_entries(self) -> Vec<DifficultyEntry> {
        self.entries
    }
}

/// Reads all records from a JSONL file, in file order. Fail-fast: the first
/// malformed line or duplicate key rejects the whole file.
pub fn read_records<R: Record>(path: &Path) -> Result<Vec<R>, DataError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DataError::Io {
            path: display.clone(),
            source,
        })?;
        let record: R = serde_json::from_str(&line).map_err(|e| DataError::MalformedLine {
            path: display.clone(),
            line: line_no,
            kind: R::KIND,
            msg: e.to_string(),
        })?;
        record.validate().map_err(|msg| DataError::MalformedLine {
            path: display.clone(),
            line: line_no,
            kind: R::KIND,
            msg,
        })?;
        if let Some(key) = record.dedup_key() {
            if !seen.insert(key.clone()) {
                return Err(DataError::DuplicateKey {
                    path: display,
                    line: line_no,
                    key,
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes records as JSONL. All records are validated before the first byte
/// is written; writing the same sequence twice yields byte-identical files.
pub fn write_records<R: Record>(path: &Path, records: &[R]) -> Result<(), DataError> {
    for (index, record) in records.iter().enumerate() {
        record.validate().map_err(|msg| DataError::InvalidRecord {
            index,
            kind: R::KIND,
            msg,
        })?;
    }
    let display = path.display().to_string();
    let io_err = |source| DataError::Io {
        path: display.clone(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let json = serde_json::to_string(record).expect("record serialization");
        writer.write_all(json.as_bytes()).map_err(io_err)?;
        writer.write_all(b"\n").map_err(io_err)?;
    }
    writer.flush().map_err(io_err)?;
    Ok(())
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

    #[test]
    fn reads_prompts_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompts.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"text\":\"one\"}\n{\"id\":\"b\",\"text\":\"two\"}\n{\"id\":\"c\",\"text\":\"three\"}\n",
        )
        .unwrap();
        let records: Vec<PromptRecord> = read_records(&path).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].id, "a");
        assert_eq!(records[2].id, "c");
    }

    #[test]
    fn rejects_nan_reward_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rewards.jsonl");
        std::fs::write(
            &path,
            "{\"prompt_id\":\"p1\",\"sample_idx\":0,\"reward\":NaN}\n",
        )
        .unwrap();
        let err = read_records::<ScoredSample>(&path).unwrap_err();
        assert!(matches!(err, DataError::MalformedLine { line: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_string_nan_reward_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rewards.jsonl");
        std::fs::write(
            &path,
            "{\"prompt_id\":\"p1\",\"sample_idx\":0,\"reward\":\"NaN\"}\n",
        )
        .unwrap();
        let err = read_records::<ScoredSample>(&path).unwrap_err();
        assert!(matches!(err, DataError::MalformedLine { line: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_duplicate_sample_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rewards.jsonl");
        std::fs::write(
            &path,
            "{\"prompt_id\":\"p1\",\"sample_idx\":0,\"reward\":1.0}\n\
             {\"prompt_id\":\"p1\",\"sample_idx\":0,\"reward\":2.0}\n",
        )
        .unwrap();
        let err = read_records::<ScoredSample>(&path).unwrap_err();
        assert!(matches!(err, DataError::DuplicateKey { line: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_whole_file_on_late_malformed_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompts.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"text\":\"one\"}\n{\"id\":\"\",\"text\":\"two\"}\n",
        )
        .unwrap();
        let err = read_records::<PromptRecord>(&path).unwrap_err();
        assert!(matches!(err, DataError::MalformedLine { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_sequence_writes_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        write_records::<ScoredSample>(&path, &[]).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"");
    }

    #[test]
    fn refuses_to_write_non_finite_reward() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        let err = write_records(&path, &[sample("p1", 0, f64::INFINITY)]).unwrap_err();
        assert!(matches!(err, DataError::InvalidRecord { index: 0, .. }), "{err}");
        assert!(!path.exists());
    }

    #[test]
    fn pair_schema_uses_canonical_key_order() {
        let pair = PreferencePair {
            prompt_id: "p1".into(),
            chosen_text: "good".into(),
            rejected_text: "bad".into(),
            chosen_reward: 1.5,
            rejected_reward: -0.5,
            chosen_source: ChosenSource::Policy,
        };
        let json = serde_json::to_string(&pair).unwrap();
        assert_eq!(
            json,
            "{\"prompt_id\":\"p1\",\"chosen\":\"good\",\"rejected\":\"bad\",\
             \"chosen_reward\":1.5,\"rejected_reward\":-0.5,\"chosen_source\":\"POLICY\"}"
        );
    }

    #[test]
    fn reward_text_is_optional_on_read_and_omitted_when_empty() {
        let s: ScoredSample =
            serde_json::from_str("{\"prompt_id\":\"p\",\"sample_idx\":3,\"reward\":-2.25}")
                .unwrap();
        assert_eq!(s.text, "");
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "{\"prompt_id\":\"p\",\"sample_idx\":3,\"reward\":-2.25}");
    }
}
