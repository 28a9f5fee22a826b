//! The per-round knobs a review team can steer.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus_io::Predicate;
use crate::error::{CpmError, Result};
use crate::llm::template::{PromptRole, PromptTemplate};
use crate::metrics::{DEFAULT_N_BOOT, DEFAULT_TARGET_SENSITIVITY, MIN_N_BOOT};
use crate::model::Concept;

pub const DEFAULT_MAX_ITERATIONS: usize = 10;
pub const DEFAULT_SPLIT_FRACTION: f64 = 0.7;
pub const DEFAULT_TOP_KEYPHRASES: usize = 50;
pub const DEFAULT_MIN_DF: usize = 3;
pub const DEFAULT_CPM_L1: f64 = 1e-3;
pub const DEFAULT_CONCURRENCY: usize = 8;

const KEYPHRASE_PROMPT: &str = "\
You are reviewing a clinical note written during an emergency or perioperative encounter.

Note:
{note}

List short keyphrases that capture the clinically relevant content of this note: \
findings, symptoms, history, mechanism of injury, procedures and medications.";

const INIT_PROMPT: &str = "\
A bag-of-keyphrases model was fitted to predict the outcome. These keyphrases had the \
strongest associations (sign in parentheses):
{top_keyphrases}

Using these keyphrases together with your clinical knowledge, propose {k} concepts for an \
interpretable prediction model. Each concept is a yes/no question that can be answered \
from a single note. For each concept, say whether a yes answer should raise the outcome \
risk (risk) or lower it (protective).";

const REPLACE_PROMPT: &str = "\
The current interpretable model uses these concepts:
{current_concepts}

After adjusting for the concepts that are staying in the model, these keyphrases had the \
strongest remaining associations with the outcome (sign in parentheses):
{top_keyphrases}

Propose {m} candidate yes/no concept questions that could replace the concept marked \
[REPLACE]. Candidates should add information beyond the concepts that are staying. For \
each candidate, say whether a yes answer should raise the outcome risk (risk) or lower it \
(protective).";

const ANNOTATION_PROMPT: &str = "\
Read the clinical note and answer the question about it.

Note:
{note}

Question: {question}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub keyphrase: String,
    pub init_proposal: String,
    pub replace_proposal: String,
    pub annotation: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            keyphrase: KEYPHRASE_PROMPT.to_string(),
            init_proposal: INIT_PROMPT.to_string(),
            replace_proposal: REPLACE_PROMPT.to_string(),
            annotation: ANNOTATION_PROMPT.to_string(),
        }
    }
}

impl PromptSet {
    pub fn body(&self, role: PromptRole) -> &str {
        match role {
            PromptRole::Keyphrase => &self.keyphrase,
            PromptRole::InitProposal => &self.init_proposal,
            PromptRole::ReplaceProposal => &self.replace_proposal,
            PromptRole::Annotation => &self.annotation,
        }
    }

    pub fn body_mut(&mut self, role: PromptRole) -> &mut String {
        match role {
            PromptRole::Keyphrase => &mut self.keyphrase,
            PromptRole::InitProposal => &mut self.init_proposal,
            PromptRole::ReplaceProposal => &mut self.replace_proposal,
            PromptRole::Annotation => &mut self.annotation,
        }
    }

    pub fn template(&self, role: PromptRole) -> Result<PromptTemplate> {
        PromptTemplate::new(role, self.body(role))
    }

    pub fn validate(&self) -> Result<()> {
        for role in PromptRole::ALL {
            self.template(role)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundConfig {
    /// Number of concept slots in the model.
    pub k: usize,
    /// Candidates requested per replacement proposal.
    pub m: usize,
    /// Maximum number of full sweeps over the slots.
    pub max_iterations: usize,
    pub prompts: PromptSet,
    pub require_sign_match: bool,
    pub group_weighting: Option<BTreeMap<String, f64>>,
    pub excluded_note_ids: BTreeSet<String>,
    pub exclusion_predicates: Vec<Predicate>,
    pub seeds: Vec<u64>,
    pub top_keyphrase_count: usize,
    pub split_fraction: f64,
    pub min_df: usize,
    /// Required question prefix, e.g. "Does the note mention".
    pub question_prefix: Option<String>,
    /// Clinician-suggested concepts shown to the proposer as examples.
    pub seed_concepts: Vec<Concept>,
    /// Lasso strength of every concept-model fit.
    pub cpm_l1: f64,
    pub concurrency_limit: usize,
    pub n_boot: usize,
    pub target_sensitivity: f64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            k: 5,
            m: 5,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            prompts: PromptSet::default(),
            require_sign_match: false,
            group_weighting: None,
            excluded_note_ids: BTreeSet::new(),
            exclusion_predicates: Vec::new(),
            seeds: vec![0],
            top_keyphrase_count: DEFAULT_TOP_KEYPHRASES,
            split_fraction: DEFAULT_SPLIT_FRACTION,
            min_df: DEFAULT_MIN_DF,
            question_prefix: None,
            seed_concepts: Vec::new(),
            cpm_l1: DEFAULT_CPM_L1,
            concurrency_limit: DEFAULT_CONCURRENCY,
            n_boot: DEFAULT_N_BOOT,
            target_sensitivity: DEFAULT_TARGET_SENSITIVITY,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CpmError::InvalidArgument(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.top_keyphrase_count == 0 {
            return bad("top_keyphrase_count must be at least 1".into());
        }
        if self.min_df == 0 {
            return bad("min_df must be at least 1".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("split_fraction must lie in (0, 1), got {}", self.split_fraction));
        }
        if !(self.cpm_l1.is_finite() && self.cpm_l1 >= 0.0) {
            return bad(format!("cpm_l1 must be finite and nonnegative, got {}", self.cpm_l1));
        }
        if self.concurrency_limit == 0 {
            return bad("concurrency_limit must be at least 1".into());
        }
        if self.n_boot < MIN_N_BOOT {
            return bad(format!("n_boot must be at least {MIN_N_BOOT}"));
        }
        if !(self.target_sensitivity > 0.0 && self.target_sensitivity <= 1.0) {
            return bad("target_sensitivity must lie in (0, 1]".into());
        }
        if let Some(weights) = &self.group_weighting {
            if weights.values().any(|w| !(w.is_finite() && *w > 0.0)) {
                return bad("group weights must be positive and finite".into());
            }
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return bad(format!("seed {dup} is listed twice"));
        }
        self.prompts.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RoundConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: RoundConfig = serde_json::from_str(r#"{"k": 3, "seeds": [1, 2]}"#).unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.m, 5);
        assert_eq!(cfg.max_iterations, 10);
        assert_eq!(cfg.seeds, vec![1, 2]);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_missing_placeholder() {
        let mut cfg = RoundConfig::default();
        cfg.prompts.annotation = "Question: {question}".to_string();
        assert!(matches!(
            cfg.validate(),
            Err(CpmError::MissingPlaceholder { placeholder, .. }) if placeholder == "note"
        ));
    }

    #[test]
    fn rejects_bad_sizes() {
        let cfg = RoundConfig {
            m: 0,
            ..RoundConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RoundConfig {
            seeds: vec![1, 1],
            ..RoundConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
