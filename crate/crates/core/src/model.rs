//! Domain types shared by every stage of the learning loop.
//!
//! Values here are immutable once constructed. Constructors validate the
//! invariants; deserialization goes through the same checks where a type
//! carries one (corpora, concepts).

use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RoundConfig;
use crate::error::{CpmError, Result};
use crate::glm::PenaltySpec;
use crate::metrics::MetricReport;
use crate::search::{IterationTrace, StabilityReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub note_id: String,
    pub encounter_id: String,
    pub text: String,
    pub note_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl Note {
    pub fn new(note_id: impl Into<String>, text: impl Into<String>) -> Self {
        let note_id = note_id.into();
        Note {
            encounter_id: note_id.clone(),
            note_id,
            text: text.into(),
            note_type: "note".to_string(),
            timestamp: None,
            group: None,
        }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }

    pub fn with_timestamp(mut self, timestamp: DateTime<Utc>) -> Self {
        self.timestamp = Some(timestamp);
        self
    }
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledNote {
    pub note: Note,
    pub label: u8,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

impl LabeledNote {
    pub fn new(note: Note, label: u8) -> Self {
        LabeledNote {
            note,
            label,
            weight: 1.0,
        }
    }

    pub fn id(&self) -> &str {
        &self.note.note_id
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(CpmError::InvalidCorpus(format!(
                "note {}: label must be 0 or 1, got {}",
                self.id(),
                self.label
            )));
        }
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(CpmError::InvalidCorpus(format!(
                "note {}: weight must be positive and finite, got {}",
                self.id(),
                self.weight
            )));
        }
        if self.note.text.trim().is_empty() {
            return Err(CpmError::InvalidCorpus(format!(
                "note {}: text is empty",
                self.id()
            )));
        }
        Ok(())
    }
}

/// An ordered, validated collection of labeled notes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCorpus")]
pub struct Corpus {
    items: Vec<LabeledNote>,
    provenance: String,
}

#[derive(Deserialize)]
struct RawCorpus {
    items: Vec<LabeledNote>,
    provenance: String,
}

impl TryFrom<RawCorpus> for Corpus {
    type Error = CpmError;

    fn try_from(raw: RawCorpus) -> Result<Self> {
        Corpus::new(raw.items, raw.provenance)
    }
}

impl Corpus {
    pub fn new(items: Vec<LabeledNote>, provenance: impl Into<String>) -> Result<Self> {
        if items.len() < 2 {
            return Err(CpmError::InvalidCorpus(format!(
                "need at least 2 notes, got {}",
                items.len()
            )));
        }
        let mut seen = HashSet::with_capacity(items.len());
        for item in &items {
            item.validate()?;
            if !seen.insert(item.id()) {
                return Err(CpmError::InvalidCorpus(format!(
                    "duplicate note_id `{}`",
                    item.id()
                )));
            }
        }
        let positives = items.iter().filter(|i| i.label == 1).count();
        if positives == 0 || positives == items.len() {
            return Err(CpmError::InvalidCorpus(
                "both outcome classes must be present".to_string(),
            ));
        }
        Ok(Corpus {
            items,
            provenance: provenance.into(),
        })
    }

    pub fn items(&self) -> &[LabeledNote] {
        &self.items
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, note_id: &str) -> Option<&LabeledNote> {
        self.items.iter().find(|i| i.id() == note_id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id().to_string()).collect()
    }

    /// Note id to position in `items`.
    pub fn index(&self) -> BTreeMap<&str, usize> {
        self.items
            .iter()
            .enumerate()
            .map(|(pos, item)| (item.id(), pos))
            .collect()
    }

    pub fn groups(&self) -> BTreeSet<String> {
        self.items
            .iter()
            .filter_map(|i| i.note.group.clone())
            .collect()
    }

    /// Builds a new corpus keeping only items accepted by `keep`.
    pub fn retain(&self, mut keep: impl FnMut(&LabeledNote) -> bool) -> Result<Corpus> {
        let items = self.items.iter().filter(|i| keep(i)).cloned().collect();
        Corpus::new(items, self.provenance.clone())
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignPrior {
    Risk,
    Protective,
    Unknown,
}

impl SignPrior {
    pub fn sign(self) -> i8 {
        match self {
            SignPrior::Risk => 1,
            SignPrior::Protective => -1,
            SignPrior::Unknown => 0,
        }
    }

    /// Whether a fitted coefficient agrees with this prior. A zero
    /// coefficient never agrees with a directional prior.
    pub fn agrees_with(self, coefficient: f64) -> bool {
        match self {
            SignPrior::Risk => coefficient > 0.0,
            SignPrior::Protective => coefficient < 0.0,
            SignPrior::Unknown => true,
        }
    }

    pub fn parse_loose(raw: &str) -> SignPrior {
        match raw.trim().to_ascii_lowercase().as_str() {
            "risk" | "+" | "+1" | "1" | "positive" | "increases" => SignPrior::Risk,
            "protective" | "-" | "-1" | "negative" | "decreases" => SignPrior::Protective,
            _ => SignPrior::Unknown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptOrigin {
    Initialization,
    Proposal,
    UserSupplied,
}

/// A yes/no question about a note, used as one binary model feature.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawConcept")]
pub struct Concept {
    pub question: String,
    pub sign_prior: SignPrior,
    pub origin: ConceptOrigin,
}

#[derive(Deserialize)]
struct RawConcept {
    question: String,
    sign_prior: SignPrior,
    origin: ConceptOrigin,
}

impl TryFrom<RawConcept> for Concept {
    type Error = CpmError;

    fn try_from(raw: RawConcept) -> Result<Self> {
        Concept::new(raw.question, raw.sign_prior, raw.origin)
    }
}

impl Concept {
    pub fn new(
        question: impl Into<String>,
        sign_prior: SignPrior,
        origin: ConceptOrigin,
    ) -> Result<Self> {
        let question = question.into().trim().to_string();
        if !question.ends_with('?') {
            return Err(CpmError::InvalidArgument(format!(
                "concept question must end with `?`: {question:?}"
            )));
        }
        Ok(Concept {
            question,
            sign_prior,
            origin,
        })
    }

    pub fn matches_prefix(&self, prefix: Option<&str>) -> bool {
        match prefix {
            None => true,
            Some(p) => self
                .question
                .to_lowercase()
                .starts_with(&p.trim().to_lowercase()),
        }
    }
}

/// Binary answers for every (note, concept) pair, with parse failures masked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationMatrix {
    pub note_ids: Vec<String>,
    pub concepts: Vec<Concept>,
    /// One row per note, one column per concept.
    pub values: Vec<Vec<u8>>,
    pub failure_mask: Vec<Vec<bool>>,
}

impl AnnotationMatrix {
    pub fn from_columns(
        note_ids: Vec<String>,
        concepts: Vec<Concept>,
        columns: &[AnnotationColumn],
    ) -> Result<Self> {
        if concepts.len() != columns.len() {
            return Err(CpmError::DimensionMismatch(format!(
                "{} concepts but {} columns",
                concepts.len(),
                columns.len()
            )));
        }
        for column in columns {
            if column.values.len() != note_ids.len() || column.failed.len() != note_ids.len() {
                return Err(CpmError::DimensionMismatch(format!(
                    "annotation column has {} rows, expected {}",
                    column.values.len(),
                    note_ids.len()
                )));
            }
        }
        let values = (0..note_ids.len())
            .map(|r| columns.iter().map(|c| c.values[r]).collect())
            .collect();
        let failure_mask = (0..note_ids.len())
            .map(|r| columns.iter().map(|c| c.failed[r]).collect())
            .collect();
        let matrix = AnnotationMatrix {
            note_ids,
            concepts,
            values,
            failure_mask,
        };
        matrix.check()?;
        Ok(matrix)
    }

    pub fn check(&self) -> Result<()> {
        if self.values.len() != self.note_ids.len() || self.failure_mask.len() != self.note_ids.len()
        {
            return Err(CpmError::DimensionMismatch(
                "annotation rows do not match note ids".to_string(),
            ));
        }
        for (row, mask) in self.values.iter().zip(&self.failure_mask) {
            if row.len() != self.concepts.len() || mask.len() != self.concepts.len() {
                return Err(CpmError::DimensionMismatch(
                    "annotation columns do not match concepts".to_string(),
                ));
            }
            if row.iter().zip(mask).any(|(&v, &failed)| v > 1 || (failed && v != 0)) {
                return Err(CpmError::InvalidArgument(
                    "annotation values must be 0/1 and failed cells must hold 0".to_string(),
                ));
            }
        }
        Ok(())
    }

    pub fn column(&self, j: usize) -> AnnotationColumn {
        AnnotationColumn {
            values: self.values.iter().map(|r| r[j]).collect(),
            failed: self.failure_mask.iter().map(|r| r[j]).collect(),
        }
    }

    pub fn row_of(&self, note_id: &str) -> Option<usize> {
        self.note_ids.iter().position(|id| id == note_id)
    }
}

/// One concept's answers over a fixed note ordering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationColumn {
    pub values: Vec<u8>,
    pub failed: Vec<bool>,
}

impl AnnotationColumn {
    pub fn failures(&self) -> usize {
        self.failed.iter().filter(|&&f| f).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_ids: Vec<String>,
    pub valid_ids: Vec<String>,
    pub seed: u64,
}

impl DataSplit {
    pub fn is_train(&self, note_id: &str) -> bool {
        self.train_ids.binary_search_by(|id| id.as_str().cmp(note_id)).is_ok()
    }

    pub fn is_valid(&self, note_id: &str) -> bool {
        self.valid_ids.binary_search_by(|id| id.as_str().cmp(note_id)).is_ok()
    }
}

/// A sparse linear model over concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCPM {
    pub concepts: Vec<Concept>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub penalty: PenaltySpec,
    /// Seed of the train/validation split the model was fitted on.
    pub split_seed: u64,
    /// Validation AUC.
    pub validation_metric: f64,
}

impl FittedCPM {
    pub fn linear_predictor(&self, answers: &[u8]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(answers)
                .map(|(b, &a)| b * f64::from(a))
                .sum::<f64>()
    }

    pub fn questions(&self) -> Vec<&str> {
        self.concepts.iter().map(|c| c.question.as_str()).collect()
    }
}

/// Stratified train/validation split, deterministic in `seed`.
///
/// Each class is ordered by note id, shuffled with a seeded ChaCha stream
/// and cut at `round(fraction * class_size)`, clamped so both sides keep
/// at least one member of each class.
pub fn make_split(corpus: &Corpus, fraction: f64, seed: u64) -> Result<DataSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CpmError::UnsplittableCorpus(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = Vec::new();
    let mut valid_ids = Vec::new();
    for label in [0u8, 1u8] {
        let mut ids: Vec<&str> = corpus
            .items()
            .iter()
            .filter(|i| i.label == label)
            .map(|i| i.id())
            .collect();
        if ids.len() < 2 {
            return Err(CpmError::UnsplittableCorpus(format!(
                "class {label} has {} member(s); need at least 2",
                ids.len()
            )));
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let n_train = ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
        train_ids.extend(ids[..n_train].iter().map(|s| s.to_string()));
        valid_ids.extend(ids[n_train..].iter().map(|s| s.to_string()));
    }
    train_ids.sort();
    valid_ids.sort();
    Ok(DataSplit {
        train_ids,
        valid_ids,
        seed,
    })
}

/// Reweights notes so each listed group carries a fixed total weight.
///
/// Groups missing from `weighting` (and notes with no group) get a total
/// weight of one, spread evenly over their members.
pub fn apply_group_weights(corpus: &Corpus, weighting: &BTreeMap<String, f64>) -> Result<Corpus> {
    let mut counts: BTreeMap<Option<&str>, usize> = BTreeMap::new();
    for item in corpus.items() {
        *counts.entry(item.note.group.as_deref()).or_default() += 1;
    }
    for (group, &total) in weighting {
        if !counts.contains_key(&Some(group.as_str())) {
            return Err(CpmError::UnknownGroup(group.clone()));
        }
        if !(total.is_finite() && total > 0.0) {
            return Err(CpmError::InvalidArgument(format!(
                "group weight for `{group}` must be positive and finite, got {total}"
            )));
        }
    }
    let items = corpus
        .items()
        .iter()
        .map(|item| {
            let group = item.note.group.as_deref();
            let total = group.and_then(|g| weighting.get(g)).copied().unwrap_or(1.0);
            let mut item = item.clone();
            item.weight = total / counts[&group] as f64;
            item
        })
        .collect();
    Corpus::new(items, corpus.provenance())
}

/// Everything persisted about one seed of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub outcome: SeedOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SeedOutcome {
    Completed(Box<CompletedSeed>),
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletedSeed {
    pub split: DataSplit,
    pub initial: FittedCPM,
    pub traces: Vec<IterationTrace>,
    pub sweeps_run: usize,
    pub converged: bool,
    pub annotations: AnnotationMatrix,
    #[serde(rename = "final")]
    pub final_model: FittedCPM,
    pub metrics: SeedMetrics,
}

/// Validation metrics plus a per-concept summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub validation: MetricReport,
    pub concepts: Vec<ConceptSummary>,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSummary {
    pub question: String,
    pub sign_prior: SignPrior,
    pub coefficient: f64,
    pub sign_ok: bool,
    pub prevalence: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub annotation_failures: usize,
}

/// A validation-set prediction of the final model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub note_id: String,
    pub label: u8,
    pub probability: f64,
}

/// The persisted ledger of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub round_index: u32,
    pub created_at: DateTime<Utc>,
    pub backend: String,
    pub config: RoundConfig,
    pub per_seed: Vec<SeedRecord>,
    /// Seed with the highest validation AUC among completed seeds.
    pub best_seed: Option<u64>,
    pub stability: StabilityReport,
    /// Penalty strengths are a local convention rather than a published value.
    pub penalty_note: String,
}

impl RunRecord {
    pub fn completed(&self) -> impl Iterator<Item = (u64, &CompletedSeed)> {
        self.per_seed.iter().filter_map(|s| match &s.outcome {
            SeedOutcome::Completed(c) => Some((s.seed, c.as_ref())),
            SeedOutcome::Failed { .. } => None,
        })
    }

    pub fn best(&self) -> Option<&CompletedSeed> {
        let best = self.best_seed?;
        self.completed().find(|(s, _)| *s == best).map(|(_, c)| c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(labels: &[u8]) -> Corpus {
        let items = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| LabeledNote::new(Note::new(format!("n{i:03}"), "text"), l))
            .collect();
        Corpus::new(items, "test").unwrap()
    }

    #[test]
    fn four_note_split_is_one_positive_each_side() {
        let c = corpus(&[1, 1, 0, 0]);
        let split = make_split(&c, 0.5, 7).unwrap();
        assert_eq!(split.train_ids.len(), 2);
        assert_eq!(split.valid_ids.len(), 2);
        for side in [&split.train_ids, &split.valid_ids] {
            let pos = side.iter().filter(|id| c.get(id).unwrap().label == 1).count();
            assert_eq!(pos, 1);
        }
    }

    #[test]
    fn zero_fraction_is_unsplittable() {
        let c = corpus(&[1, 1, 0, 0]);
        assert!(matches!(
            make_split(&c, 0.0, 1),
            Err(CpmError::UnsplittableCorpus(_))
        ));
        assert!(matches!(
            make_split(&c, 1.0, 1),
            Err(CpmError::UnsplittableCorpus(_))
        ));
    }

    #[test]
    fn singleton_class_is_unsplittable() {
        let c = corpus(&[1, 0, 0, 0]);
        assert!(matches!(
            make_split(&c, 0.5, 1),
            Err(CpmError::UnsplittableCorpus(_))
        ));
    }

    #[test]
    fn hundred_notes_thirty_positive() {
        let mut labels = vec![1u8; 30];
        labels.extend(vec![0u8; 70]);
        let c = corpus(&labels);
        let split = make_split(&c, 0.7, 3).unwrap();
        // round(0.7 * 30) = 21, round(0.7 * 70) = 49
        let train_pos = split
            .train_ids
            .iter()
            .filter(|id| c.get(id).unwrap().label == 1)
            .count();
        assert_eq!(train_pos, 21);
        assert_eq!(split.train_ids.len(), 70);
    }

    #[test]
    fn split_ignores_corpus_order() {
        let labels: Vec<u8> = (0..40).map(|i| (i % 3 == 0) as u8).collect();
        let c = corpus(&labels);
        let mut items = c.items().to_vec();
        items.reverse();
        let reversed = Corpus::new(items, "rev").unwrap();
        assert_eq!(make_split(&c, 0.6, 11).unwrap(), make_split(&reversed, 0.6, 11).unwrap());
        assert_ne!(make_split(&c, 0.6, 11).unwrap(), make_split(&c, 0.6, 12).unwrap());
    }

    #[test]
    fn group_weights_definition() {
        let items = vec![
            LabeledNote::new(Note::new("a1", "x").with_group("A"), 1),
            LabeledNote::new(Note::new("a2", "x").with_group("A"), 0),
            LabeledNote::new(Note::new("a3", "x").with_group("A"), 0),
            LabeledNote::new(Note::new("b1", "x").with_group("B"), 1),
        ];
        let c = Corpus::new(items, "t").unwrap();
        let w = BTreeMap::from([("A".to_string(), 1.0), ("B".to_string(), 1.0)]);
        let weighted = apply_group_weights(&c, &w).unwrap();
        let weights: Vec<f64> = weighted.items().iter().map(|i| i.weight).collect();
        assert_eq!(weights, vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0]);

        let empty = apply_group_weights(&c, &BTreeMap::new()).unwrap();
        let weights: Vec<f64> = empty.items().iter().map(|i| i.weight).collect();
        assert_eq!(weights, vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0]);

        let unknown = BTreeMap::from([("C".to_string(), 1.0)]);
        assert!(matches!(
            apply_group_weights(&c, &unknown),
            Err(CpmError::UnknownGroup(g)) if g == "C"
        ));
    }

    #[test]
    fn equal_group_weights_give_mean_of_group_prevalences() {
        // A: 300 notes, 60 positive; B: 100 notes, 50 positive.
        let mut items = Vec::new();
        for i in 0..300 {
            items.push(LabeledNote::new(
                Note::new(format!("a{i}"), "x").with_group("A"),
                (i < 60) as u8,
            ));
        }
        for i in 0..100 {
            items.push(LabeledNote::new(
                Note::new(format!("b{i}"), "x").with_group("B"),
                (i < 50) as u8,
            ));
        }
        let c = Corpus::new(items, "t").unwrap();
        let w = BTreeMap::from([("A".to_string(), 1.0), ("B".to_string(), 1.0)]);
        let weighted = apply_group_weights(&c, &w).unwrap();
        let total: f64 = weighted.items().iter().map(|i| i.weight).sum();
        let pos: f64 = weighted
            .items()
            .iter()
            .filter(|i| i.label == 1)
            .map(|i| i.weight)
            .sum();
        let expected = (60.0 / 300.0 + 50.0 / 100.0) / 2.0;
        assert!((pos / total - expected).abs() < 1e-12);
    }

    #[test]
    fn corpus_invariants() {
        let one_class = vec![
            LabeledNote::new(Note::new("a", "x"), 1),
            LabeledNote::new(Note::new("b", "x"), 1),
        ];
        assert!(Corpus::new(one_class, "t").is_err());
        let dup = vec![
            LabeledNote::new(Note::new("a", "x"), 1),
            LabeledNote::new(Note::new("a", "y"), 0),
        ];
        assert!(Corpus::new(dup, "t").is_err());
        let blank = vec![
            LabeledNote::new(Note::new("a", "  "), 1),
            LabeledNote::new(Note::new("b", "y"), 0),
        ];
        assert!(Corpus::new(blank, "t").is_err());
        let mut bad_weight = LabeledNote::new(Note::new("a", "x"), 1);
        bad_weight.weight = 0.0;
        assert!(Corpus::new(vec![bad_weight, LabeledNote::new(Note::new("b", "y"), 0)], "t").is_err());
    }

    #[test]
    fn concept_requires_question_mark() {
        assert!(Concept::new("Does the patient smoke", SignPrior::Risk, ConceptOrigin::Proposal).is_err());
        let c = Concept::new(" Does the patient smoke? ", SignPrior::Risk, ConceptOrigin::Proposal).unwrap();
        assert_eq!(c.question, "Does the patient smoke?");
        assert!(c.matches_prefix(Some("does the")));
        assert!(!c.matches_prefix(Some("Does the note mention")));
        let bad: std::result::Result<Concept, _> = serde_json::from_str(
            r#"{"question":"no mark","sign_prior":"risk","origin":"proposal"}"#,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn sign_prior_agreement() {
        assert!(SignPrior::Risk.agrees_with(0.2));
        assert!(!SignPrior::Risk.agrees_with(0.0));
        assert!(!SignPrior::Risk.agrees_with(-0.2));
        assert!(SignPrior::Protective.agrees_with(-0.2));
        assert!(SignPrior::Unknown.agrees_with(0.0));
    }

    mod roundtrip {
        use super::*;
        use proptest::prelude::*;

        fn arb_note() -> impl Strategy<Value = LabeledNote> {
            (
                "[a-z0-9]{1,8}",
                "[ -~]{0,30}[a-z]",
                proptest::option::of("[A-Z]{1,3}"),
                proptest::option::of(0i64..4_000_000_000),
                0u8..=1,
                0.001f64..1000.0,
            )
                .prop_map(|(id, text, group, ts, label, weight)| {
                    let mut note = Note::new(id, text);
                    note.group = group;
                    note.timestamp = ts.and_then(|s| DateTime::from_timestamp(s, 0));
                    LabeledNote {
                        note,
                        label,
                        weight,
                    }
                })
        }

        proptest! {
            #[test]
            fn labeled_note_roundtrips(item in arb_note()) {
                let json = serde_json::to_string(&item).unwrap();
                let back: LabeledNote = serde_json::from_str(&json).unwrap();
                prop_assert_eq!(back, item);
            }

            #[test]
            fn concept_and_matrix_roundtrip(
                q in "[A-Za-z ]{1,20}",
                prior in prop_oneof![Just(SignPrior::Risk), Just(SignPrior::Protective), Just(SignPrior::Unknown)],
                cells in proptest::collection::vec((0u8..=1, any::<bool>()), 1..12),
            ) {
                let concept = Concept::new(format!("{q}?"), prior, ConceptOrigin::Proposal).unwrap();
                let column = AnnotationColumn {
                    values: cells.iter().map(|&(v, f)| if f { 0 } else { v }).collect(),
                    failed: cells.iter().map(|&(_, f)| f).collect(),
                };
                let ids = (0..cells.len()).map(|i| format!("n{i}")).collect();
                let m = AnnotationMatrix::from_columns(ids, vec![concept], &[column]).unwrap();
                let json = serde_json::to_string(&m).unwrap();
                let back: AnnotationMatrix = serde_json::from_str(&json).unwrap();
                prop_assert_eq!(back, m);
            }
        }
    }
}
