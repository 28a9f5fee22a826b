//! Human feedback between rounds, round persistence and config lineage.
//!
//! Layout under a run directory:
//!
//! ```text
//! <root>/<run_id>/lineage.jsonl
//! <root>/<run_id>/configs/round_<n>.json
//! <root>/<run_id>/round_<n>/{config.json, trace.json, annotations.jsonl, model.json, metrics.json}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RoundConfig;
use crate::corpus_io::Predicate;
use crate::error::{CpmError, Result};
use crate::llm::template::{PromptRole, PromptTemplate};
use crate::model::{
    AnnotationMatrix, CompletedSeed, Concept, ConceptOrigin, DataSplit, FittedCPM, RunRecord, SeedMetrics,
    SeedOutcome, SeedRecord,
};
use crate::search::{IterationTrace, StabilityReport};

const SEED_CONCEPT_HEADER: &str = "Concepts suggested by the clinical team (use them as examples):";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackAction {
    pub kind: ActionKind,
    pub author: String,
    /// Why the team asked for this change. Required.
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ActionKind {
    EditPrompt { role: PromptRole, body: String },
    SetGroupWeights { weights: Option<BTreeMap<String, f64>> },
    ExcludeNotes { ids: BTreeSet<String> },
    AddExclusionPredicate { predicate: Predicate },
    SetSignMatch { enabled: bool },
    SetK { k: usize },
    SetM { m: usize },
    SetMaxIterations { max_iterations: usize },
    SetSeeds { seeds: Vec<u64> },
    SetQuestionPrefix { prefix: Option<String> },
    AddSeedConcepts { concepts: Vec<Concept> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldChange {
    /// Dotted path of the changed config field.
    pub field: String,
    pub before: Value,
    pub after: Value,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfigDiff {
    pub changes: Vec<FieldChange>,
}

impl ConfigDiff {
    pub fn between(before: &RoundConfig, after: &RoundConfig) -> Result<Self> {
        let mut changes = Vec::new();
        diff_values("", &serde_json::to_value(before)?, &serde_json::to_value(after)?, &mut changes);
        Ok(ConfigDiff { changes })
    }

    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }
}

fn diff_values(path: &str, a: &Value, b: &Value, out: &mut Vec<FieldChange>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            for key in keys {
                let child = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                diff_values(
                    &child,
                    x.get(key).unwrap_or(&Value::Null),
                    y.get(key).unwrap_or(&Value::Null),
                    out,
                );
            }
        }
        _ if a != b => out.push(FieldChange {
            field: path.to_string(),
            before: a.clone(),
            after: b.clone(),
        }),
        _ => {}
    }
}

fn invalid(msg: impl Into<String>) -> CpmError {
    CpmError::InvalidFeedback(msg.into())
}

fn append_seed_concepts(body: &mut String, added: &[Concept]) {
    if !body.contains(SEED_CONCEPT_HEADER) {
        body.push_str("\n\n");
        body.push_str(SEED_CONCEPT_HEADER);
    }
    for c in added {
        let prior = serde_json::to_value(c.sign_prior).expect("prior serializes");
        body.push_str(&format!("\n- {} ({})", c.question, prior.as_str().unwrap_or("unknown")));
    }
}

/// Applies feedback to the previous config. Every action needs an author
/// and a rationale; the resulting config must validate. `known_groups`,
/// when given, restricts group weights to groups present in the corpus.
pub fn derive_next_config(
    previous: &RoundConfig,
    actions: &[FeedbackAction],
    known_groups: Option<&BTreeSet<String>>,
) -> Result<(RoundConfig, ConfigDiff)> {
    let mut next = previous.clone();
    for (i, action) in actions.iter().enumerate() {
        let at = |msg: String| invalid(format!("action {i}: {msg}"));
        if action.rationale.trim().is_empty() {
            return Err(at("a rationale is required".into()));
        }
        if action.author.trim().is_empty() {
            return Err(at("an author is required".into()));
        }
        match &action.kind {
            ActionKind::EditPrompt { role, body } => {
                PromptTemplate::new(*role, body.clone()).map_err(|e| at(e.to_string()))?;
                *next.prompts.body_mut(*role) = body.clone();
            }
            ActionKind::SetGroupWeights { weights } => {
                if let (Some(weights), Some(known)) = (weights, known_groups) {
                    if let Some(g) = weights.keys().find(|g| !known.contains(*g)) {
                        return Err(at(format!("group `{g}` is not present in the corpus")));
                    }
                }
                next.group_weighting = weights.clone();
            }
            ActionKind::ExcludeNotes { ids } => next.excluded_note_ids.extend(ids.iter().cloned()),
            ActionKind::AddExclusionPredicate { predicate } => {
                if let Predicate::TextNotMatching { pattern } = predicate {
                    regex::Regex::new(pattern).map_err(|e| at(format!("invalid regex: {e}")))?;
                }
                next.exclusion_predicates.push(predicate.clone());
            }
            ActionKind::SetSignMatch { enabled } => next.require_sign_match = *enabled,
            ActionKind::SetK { k } => next.k = *k,
            ActionKind::SetM { m } => next.m = *m,
            ActionKind::SetMaxIterations { max_iterations } => next.max_iterations = *max_iterations,
            ActionKind::SetSeeds { seeds } => next.seeds = seeds.clone(),
            ActionKind::SetQuestionPrefix { prefix } => {
                next.question_prefix = prefix.as_ref().map(|p| p.trim().to_string()).filter(|p| !p.is_empty())
            }
            ActionKind::AddSeedConcepts { concepts } => {
                let mut added: Vec<Concept> = Vec::new();
                for c in concepts {
                    if next.seed_concepts.iter().chain(&added).all(|e| e.question != c.question) {
                        added.push(Concept {
                            origin: ConceptOrigin::UserSupplied,
                            ..c.clone()
                        });
                    }
                }
                if added.is_empty() {
                    continue;
                }
                append_seed_concepts(next.prompts.body_mut(PromptRole::InitProposal), &added);
                append_seed_concepts(next.prompts.body_mut(PromptRole::ReplaceProposal), &added);
                next.seed_concepts.extend(added);
            }
        }
    }
    next.validate().map_err(|e| invalid(e.to_string()))?;
    let diff = ConfigDiff::between(previous, &next)?;
    Ok((next, diff))
}

/// Canonical serialized form of a config; lineage compares these bytes.
pub fn config_json(config: &RoundConfig) -> Result<String> {
    let mut s = serde_json::to_string_pretty(config)?;
    s.push('\n');
    Ok(s)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body).map_err(|e| CpmError::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).map_err(|e| not_found_or_io(path, e))?;
    Ok(serde_json::from_str(&body)?)
}

fn not_found_or_io(path: &Path, e: std::io::Error) -> CpmError {
    if e.kind() == std::io::ErrorKind::NotFound {
        CpmError::NotFound(path.display().to_string())
    } else {
        CpmError::io(path, e)
    }
}

fn check_run_id(run_id: &str) -> Result<()> {
    let ok = !run_id.is_empty()
        && run_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && run_id != "."
        && run_id != "..";
    if ok {
        Ok(())
    } else {
        Err(CpmError::InvalidArgument(format!("invalid run id `{run_id}`")))
    }
}

pub fn run_dir(root: &Path, run_id: &str) -> Result<PathBuf> {
    check_run_id(run_id)?;
    Ok(root.join(run_id))
}

pub fn round_dir(root: &Path, run_id: &str, round_index: u32) -> Result<PathBuf> {
    Ok(run_dir(root, run_id)?.join(format!("round_{round_index}")))
}

#[derive(Serialize, Deserialize)]
struct RoundHeader {
    run_id: String,
    round_index: u32,
    created_at: DateTime<Utc>,
    backend: String,
    penalty_note: String,
    config: RoundConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum TraceEntry {
    Completed {
        seed: u64,
        split: DataSplit,
        initial: FittedCPM,
        traces: Vec<IterationTrace>,
        sweeps_run: usize,
        converged: bool,
    },
    Failed {
        seed: u64,
        error: String,
    },
}

#[derive(Serialize, Deserialize)]
struct SeedModel {
    seed: u64,
    #[serde(rename = "final")]
    final_model: FittedCPM,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    best_seed: Option<u64>,
    seeds: Vec<SeedModel>,
}

#[derive(Serialize, Deserialize)]
struct SeedMetricsEntry {
    seed: u64,
    metrics: SeedMetrics,
}

#[derive(Serialize, Deserialize)]
struct MetricsFile {
    stability: StabilityReport,
    seeds: Vec<SeedMetricsEntry>,
}

/// One note's answers for one seed's final concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationLine {
    pub seed: u64,
    pub note_id: String,
    pub values: Vec<u8>,
    pub failed: Vec<bool>,
}

/// Writes a round's artifacts. An existing round directory is never
/// overwritten.
pub fn persist_round(root: &Path, record: &RunRecord) -> Result<PathBuf> {
    let run = run_dir(root, &record.run_id)?;
    fs::create_dir_all(&run).map_err(|e| CpmError::io(&run, e))?;
    let target = round_dir(root, &record.run_id, record.round_index)?;
    if target.exists() {
        return Err(CpmError::PathCollision(target));
    }
    // Files are written into a hidden staging directory that is renamed into
    // place at the end, so readers never observe a partial round.
    let dir = run.join(format!(".round_{}.partial", record.round_index));
    match fs::create_dir(&dir) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(CpmError::PathCollision(target)),
        Err(e) => return Err(CpmError::io(&dir, e)),
    }
    let written = write_round_files(&dir, record);
    if let Err(e) = written {
        let _ = fs::remove_dir_all(&dir);
        return Err(e);
    }
    if target.exists() {
        let _ = fs::remove_dir_all(&dir);
        return Err(CpmError::PathCollision(target));
    }
    fs::rename(&dir, &target).map_err(|e| CpmError::io(&target, e))?;
    Ok(target)
}

fn write_round_files(dir: &Path, record: &RunRecord) -> Result<()> {
    write_json(
        &dir.join("config.json"),
        &RoundHeader {
            run_id: record.run_id.clone(),
            round_index: record.round_index,
            created_at: record.created_at,
            backend: record.backend.clone(),
            penalty_note: record.penalty_note.clone(),
            config: record.config.clone(),
        },
    )?;
    let mut traces = Vec::new();
    let mut models = Vec::new();
    let mut metrics = Vec::new();
    let annotations_path = dir.join("annotations.jsonl");
    let file = File::create(&annotations_path).map_err(|e| CpmError::io(&annotations_path, e))?;
    let mut annotations = BufWriter::new(file);
    for s in &record.per_seed {
        match &s.outcome {
            SeedOutcome::Failed { error } => traces.push(TraceEntry::Failed {
                seed: s.seed,
                error: error.clone(),
            }),
            SeedOutcome::Completed(c) => {
                traces.push(TraceEntry::Completed {
                    seed: s.seed,
                    split: c.split.clone(),
                    initial: c.initial.clone(),
                    traces: c.traces.clone(),
                    sweeps_run: c.sweeps_run,
                    converged: c.converged,
                });
                models.push(SeedModel {
                    seed: s.seed,
                    final_model: c.final_model.clone(),
                });
                metrics.push(SeedMetricsEntry {
                    seed: s.seed,
                    metrics: c.metrics.clone(),
                });
                let m = &c.annotations;
                for (r, id) in m.note_ids.iter().enumerate() {
                    let line = AnnotationLine {
                        seed: s.seed,
                        note_id: id.clone(),
                        values: m.values[r].clone(),
                        failed: m.failure_mask[r].clone(),
                    };
                    serde_json::to_writer(&mut annotations, &line)?;
                    annotations
                        .write_all(b"\n")
                        .map_err(|e| CpmError::io(&annotations_path, e))?;
                }
            }
        }
    }
    annotations.flush().map_err(|e| CpmError::io(&annotations_path, e))?;
    write_json(&dir.join("trace.json"), &traces)?;
    write_json(
        &dir.join("model.json"),
        &ModelFile {
            best_seed: record.best_seed,
            seeds: models,
        },
    )?;
    write_json(
        &dir.join("metrics.json"),
        &MetricsFile {
            stability: record.stability.clone(),
            seeds: metrics,
        },
    )
}

pub fn load_annotation_lines(root: &Path, run_id: &str, round_index: u32) -> Result<Vec<AnnotationLine>> {
    let path = round_dir(root, run_id, round_index)?.join("annotations.jsonl");
    let file = File::open(&path).map_err(|e| not_found_or_io(&path, e))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CpmError::io(&path, e))?;
        if !line.trim().is_empty() {
            lines.push(serde_json::from_str(&line)?);
        }
    }
    Ok(lines)
}

/// Reassembles a persisted round into the record that was saved.
pub fn load_round(root: &Path, run_id: &str, round_index: u32) -> Result<RunRecord> {
    let dir = round_dir(root, run_id, round_index)?;
    if !dir.is_dir() {
        return Err(CpmError::NotFound(format!("run {run_id} round {round_index}")));
    }
    let header: RoundHeader = read_json(&dir.join("config.json"))?;
    let traces: Vec<TraceEntry> = read_json(&dir.join("trace.json"))?;
    let models: ModelFile = read_json(&dir.join("model.json"))?;
    let metrics: MetricsFile = read_json(&dir.join("metrics.json"))?;
    let mut lines: BTreeMap<u64, Vec<AnnotationLine>> = BTreeMap::new();
    for line in load_annotation_lines(root, run_id, round_index)? {
        lines.entry(line.seed).or_default().push(line);
    }
    let best_seed = models.best_seed;
    let mut models: BTreeMap<u64, FittedCPM> = models.seeds.into_iter().map(|m| (m.seed, m.final_model)).collect();
    let mut metrics_by_seed: BTreeMap<u64, SeedMetrics> =
        metrics.seeds.into_iter().map(|m| (m.seed, m.metrics)).collect();
    let corrupt = |what: String| CpmError::InvalidArgument(format!("round directory {}: {what}", dir.display()));
    let mut per_seed = Vec::with_capacity(traces.len());
    for entry in traces {
        let record = match entry {
            TraceEntry::Failed { seed, error } => SeedRecord {
                seed,
                outcome: SeedOutcome::Failed { error },
            },
            TraceEntry::Completed {
                seed,
                split,
                initial,
                traces,
                sweeps_run,
                converged,
            } => {
                let final_model = models.remove(&seed).ok_or_else(|| corrupt(format!("no model for seed {seed}")))?;
                let seed_metrics = metrics_by_seed
                    .remove(&seed)
                    .ok_or_else(|| corrupt(format!("no metrics for seed {seed}")))?;
                let rows = lines.remove(&seed).unwrap_or_default();
                let annotations = AnnotationMatrix {
                    note_ids: rows.iter().map(|l| l.note_id.clone()).collect(),
                    concepts: final_model.concepts.clone(),
                    values: rows.iter().map(|l| l.values.clone()).collect(),
                    failure_mask: rows.into_iter().map(|l| l.failed).collect(),
                };
                annotations.check()?;
                SeedRecord {
                    seed,
                    outcome: SeedOutcome::Completed(Box::new(CompletedSeed {
                        split,
                        initial,
                        traces,
                        sweeps_run,
                        converged,
                        annotations,
                        final_model,
                        metrics: seed_metrics,
                    })),
                }
            }
        };
        per_seed.push(record);
    }
    Ok(RunRecord {
        run_id: header.run_id,
        round_index: header.round_index,
        created_at: header.created_at,
        backend: header.backend,
        config: header.config,
        per_seed,
        best_seed,
        stability: metrics.stability,
        penalty_note: header.penalty_note,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub rounds: Vec<u32>,
    pub configured_rounds: Vec<u32>,
}

fn round_numbers(dir: &Path, prefix: &str, suffix: &str) -> Vec<u32> {
    let mut out: Vec<u32> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            name.strip_prefix(prefix)?.strip_suffix(suffix)?.parse().ok()
        })
        .collect();
    out.sort_unstable();
    out
}

/// Runs found under `root`, with their persisted and configured rounds.
pub fn list_runs(root: &Path) -> Result<Vec<RunSummary>> {
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut runs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| CpmError::io(root, e))? {
        let entry = entry.map_err(|e| CpmError::io(root, e))?;
        if !entry.path().is_dir() {
            continue;
        }
        let run_id = entry.file_name().to_string_lossy().to_string();
        if check_run_id(&run_id).is_err() {
            continue;
        }
        let path = entry.path();
        runs.push(RunSummary {
            rounds: round_numbers(&path, "round_", ""),
            configured_rounds: round_numbers(&path.join("configs"), "round_", ".json"),
            run_id,
        });
    }
    runs.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub round_index: u32,
    pub parent: Option<u32>,
    pub actions: Vec<FeedbackAction>,
    pub config_sha256: String,
}

/// The append-only history of round configs of one run.
#[derive(Debug, Clone)]
pub struct Lineage {
    dir: PathBuf,
}

impl Lineage {
    pub fn open(root: &Path, run_id: &str) -> Result<Self> {
        Ok(Lineage {
            dir: run_dir(root, run_id)?,
        })
    }

    fn log_path(&self) -> PathBuf {
        self.dir.join("lineage.jsonl")
    }

    pub fn config_path(&self, round_index: u32) -> PathBuf {
        self.dir.join("configs").join(format!("round_{round_index}.json"))
    }

    pub fn entries(&self) -> Result<Vec<LineageEntry>> {
        let path = self.log_path();
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(CpmError::io(&path, e)),
        };
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| CpmError::io(&path, e))?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }

    pub fn latest_round(&self) -> Result<Option<u32>> {
        Ok(self.entries()?.last().map(|e| e.round_index))
    }

    pub fn config(&self, round_index: u32) -> Result<RoundConfig> {
        read_json(&self.config_path(round_index))
    }

    pub fn config_bytes(&self, round_index: u32) -> Result<Vec<u8>> {
        let path = self.config_path(round_index);
        fs::read(&path).map_err(|e| not_found_or_io(&path, e))
    }

    fn append(&self, entry: &LineageEntry, config: &RoundConfig) -> Result<()> {
        let configs = self.dir.join("configs");
        fs::create_dir_all(&configs).map_err(|e| CpmError::io(&configs, e))?;
        let path = self.config_path(entry.round_index);
        if path.exists() {
            return Err(CpmError::PathCollision(path));
        }
        fs::write(&path, config_json(config)?).map_err(|e| CpmError::io(&path, e))?;
        let log = self.log_path();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log)
            .map_err(|e| CpmError::io(&log, e))?;
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(|e| CpmError::io(&log, e))
    }

    /// Records the first round's config.
    pub fn start(&self, config: &RoundConfig) -> Result<u32> {
        if !self.entries()?.is_empty() {
            return Err(CpmError::InvalidArgument(format!(
                "run {} already has a lineage",
                self.dir.display()
            )));
        }
        config.validate()?;
        let entry = LineageEntry {
            round_index: 1,
            parent: None,
            actions: Vec::new(),
            config_sha256: sha256_hex(config_json(config)?.as_bytes()),
        };
        self.append(&entry, config)?;
        Ok(1)
    }

    /// Derives and records the next round's config from the latest one.
    pub fn record_feedback(
        &self,
        actions: &[FeedbackAction],
        known_groups: Option<&BTreeSet<String>>,
    ) -> Result<(u32, RoundConfig, ConfigDiff)> {
        let parent = self
            .latest_round()?
            .ok_or_else(|| CpmError::NotFound(format!("lineage of {}", self.dir.display())))?;
        let previous = self.config(parent)?;
        let (next, diff) = derive_next_config(&previous, actions, known_groups)?;
        let entry = LineageEntry {
            round_index: parent + 1,
            parent: Some(parent),
            actions: actions.to_vec(),
            config_sha256: sha256_hex(config_json(&next)?.as_bytes()),
        };
        self.append(&entry, &next)?;
        Ok((entry.round_index, next, diff))
    }
}

/// Recomputes every round config from the first one and the recorded
/// feedback. Returns the canonical bytes of each round's config.
pub fn replay_lineage(initial: &RoundConfig, entries: &[LineageEntry]) -> Result<Vec<(u32, String)>> {
    let mut out: Vec<(u32, String)> = Vec::with_capacity(entries.len());
    let mut configs: BTreeMap<u32, RoundConfig> = BTreeMap::new();
    for entry in entries {
        let config = match entry.parent {
            None => initial.clone(),
            Some(parent) => {
                let base = configs
                    .get(&parent)
                    .ok_or_else(|| CpmError::NotFound(format!("parent round {parent}")))?;
                derive_next_config(base, &entry.actions, None)?.0
            }
        };
        let bytes = config_json(&config)?;
        if sha256_hex(bytes.as_bytes()) != entry.config_sha256 {
            return Err(CpmError::InvalidArgument(format!(
                "round {} does not reproduce its recorded config",
                entry.round_index
            )));
        }
        configs.insert(entry.round_index, config);
        out.push((entry.round_index, bytes));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SignPrior;

    fn action(kind: ActionKind) -> FeedbackAction {
        FeedbackAction {
            kind,
            author: "reviewer".into(),
            rationale: "requested by the team".into(),
        }
    }

    #[test]
    fn sign_match_feedback_changes_one_field() {
        let prev = RoundConfig::default();
        let (next, diff) =
            derive_next_config(&prev, &[action(ActionKind::SetSignMatch { enabled: true })], None).unwrap();
        assert!(next.require_sign_match);
        assert_eq!(diff.changes.len(), 1);
        assert_eq!(diff.changes[0].field, "require_sign_match");
    }

    #[test]
    fn rationale_is_required() {
        let mut a = action(ActionKind::SetK { k: 3 });
        a.rationale = "  ".into();
        assert!(matches!(
            derive_next_config(&RoundConfig::default(), &[a], None),
            Err(CpmError::InvalidFeedback(_))
        ));
    }

    #[test]
    fn prompt_edit_must_keep_placeholders() {
        let bad = action(ActionKind::EditPrompt {
            role: PromptRole::Annotation,
            body: "Answer yes or no about {note}.".into(),
        });
        assert!(matches!(
            derive_next_config(&RoundConfig::default(), &[bad], None),
            Err(CpmError::InvalidFeedback(_))
        ));
        let good = action(ActionKind::EditPrompt {
            role: PromptRole::Annotation,
            body: "Note: {note}\nQuestion: {question}\nIgnore CT results.".into(),
        });
        let (_, diff) = derive_next_config(&RoundConfig::default(), &[good], None).unwrap();
        assert_eq!(diff.changes.len(), 1);
        assert_eq!(diff.changes[0].field, "prompts.annotation");
    }

    #[test]
    fn unknown_group_is_rejected() {
        let known = BTreeSet::from(["adult".to_string()]);
        let a = action(ActionKind::SetGroupWeights {
            weights: Some(BTreeMap::from([("pediatric".to_string(), 1.0)])),
        });
        assert!(derive_next_config(&RoundConfig::default(), &[a], Some(&known)).is_err());
    }

    #[test]
    fn seed_concepts_reach_proposal_prompts() {
        let c = Concept::new("Did the patient vomit?", SignPrior::Risk, ConceptOrigin::Proposal).unwrap();
        let a = action(ActionKind::AddSeedConcepts { concepts: vec![c.clone(), c] });
        let (next, _) = derive_next_config(&RoundConfig::default(), &[a], None).unwrap();
        assert_eq!(next.seed_concepts.len(), 1);
        assert_eq!(next.seed_concepts[0].origin, ConceptOrigin::UserSupplied);
        assert!(next.prompts.init_proposal.contains("- Did the patient vomit? (risk)"));
        assert!(next.prompts.replace_proposal.contains("- Did the patient vomit? (risk)"));
        assert!(!next.prompts.annotation.contains("vomit"));
    }

    #[test]
    fn lineage_replays_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let lineage = Lineage::open(dir.path(), "run-1").unwrap();
        let initial = RoundConfig::default();
        lineage.start(&initial).unwrap();
        lineage
            .record_feedback(&[action(ActionKind::SetSignMatch { enabled: true })], None)
            .unwrap();
        lineage
            .record_feedback(&[action(ActionKind::ExcludeNotes {
                ids: BTreeSet::from(["n1".to_string()]),
            })], None)
            .unwrap();
        let replayed = replay_lineage(&initial, &lineage.entries().unwrap()).unwrap();
        assert_eq!(replayed.len(), 3);
        for (round, bytes) in replayed {
            assert_eq!(bytes.as_bytes(), lineage.config_bytes(round).unwrap().as_slice());
        }
    }

    #[test]
    fn bad_run_ids_are_rejected() {
        assert!(run_dir(Path::new("/tmp"), "../x").is_err());
        assert!(run_dir(Path::new("/tmp"), "").is_err());
        assert!(run_dir(Path::new("/tmp"), "run-2024_a").is_ok());
    }
}
