//! Synthetic corpora with planted concepts, for exercising the search end
//! to end against the oracle backend.
//!
//! Each note carries independent latent binary concepts; its label is drawn
//! from a logistic model over them. The oracle world answers every concept
//! question from the latent truth and echoes each note's keyphrases.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CpmError, Result};
use crate::glm::sigmoid;
use crate::llm::oracle::{OracleConcept, OracleNote, OracleWorld};
use crate::model::{Corpus, LabeledNote, Note, SignPrior};

/// Largest number of informative concepts the exact Bayes AUC enumerates.
pub const MAX_ENUMERATED_CONCEPTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConcept {
    pub question: String,
    pub keyphrases: Vec<String>,
    /// The direction the oracle states when proposing this concept.
    pub prior: SignPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGroup {
    pub name: Option<String>,
    pub n_notes: usize,
    pub intercept: f64,
    /// One per concept; zero marks a distractor in this group.
    pub coefficients: Vec<f64>,
    pub prevalences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub concepts: Vec<PlantedConcept>,
    pub groups: Vec<SynthGroup>,
    /// Size of the pool of uninformative keyphrases.
    pub noise_pool: usize,
    /// Uninformative keyphrases attached to each note.
    pub noise_per_note: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub world: OracleWorld,
    /// Exact AUC of the true risk score within each group, keyed by group
    /// name ("" when ungrouped).
    pub bayes_auc: BTreeMap<String, f64>,
    /// Questions with a nonzero coefficient in some group.
    pub informative: Vec<String>,
}

const CATALOG: [(&str, &str, bool); 12] = [
    ("Did the patient lose consciousness?", "loss of consciousness", true),
    ("Is the patient alert and oriented?", "alert and oriented", false),
    ("Did the patient vomit after the injury?", "post-injury vomiting", true),
    ("Is the patient taking anticoagulants?", "anticoagulant use", true),
    ("Is the neurological exam documented as normal?", "normal neuro exam", false),
    ("Does the patient report neck pain?", "neck pain", true),
    ("Was the injury caused by a ground-level fall?", "ground-level fall", true),
    ("Is there a scalp laceration?", "scalp laceration", true),
    ("Does the patient report a headache?", "headache", true),
    ("Was alcohol involved?", "alcohol intoxication", true),
    ("Was the patient wearing a helmet?", "helmet worn", false),
    ("Is there a visible skull deformity?", "skull deformity", true),
];

impl SynthSpec {
    /// A single-group corpus: the first `k` catalog concepts carry signal
    /// with alternating magnitudes, the next `distractors` carry none.
    pub fn planted(n_notes: usize, k: usize, distractors: usize, seed: u64) -> Result<Self> {
        if k + distractors > CATALOG.len() {
            return Err(CpmError::InvalidArgument(format!(
                "at most {} synthetic concepts are available",
                CATALOG.len()
            )));
        }
        const MAGNITUDES: [f64; 6] = [1.8, 1.5, 1.3, 1.1, 1.0, 0.9];
        let mut concepts = Vec::new();
        let mut coefficients = Vec::new();
        for (i, &(q, phrase, risk)) in CATALOG.iter().take(k + distractors).enumerate() {
            concepts.push(PlantedConcept {
                question: q.to_string(),
                keyphrases: vec![phrase.to_string()],
                prior: if risk { SignPrior::Risk } else { SignPrior::Protective },
            });
            coefficients.push(if i < k {
                let m = MAGNITUDES[i % MAGNITUDES.len()];
                if risk {
                    m
                } else {
                    -m
                }
            } else {
                0.0
            });
        }
        let prevalences = (0..concepts.len()).map(|i| 0.25 + 0.05 * (i % 4) as f64).collect();
        Ok(SynthSpec {
            concepts,
            groups: vec![SynthGroup {
                name: None,
                n_notes,
                intercept: -1.0,
                coefficients,
                prevalences,
            }],
            noise_pool: 40,
            noise_per_note: 4,
            seed,
        })
    }

    /// Makes the oracle state the opposite direction for one concept.
    pub fn invert_prior(mut self, question: &str) -> Result<Self> {
        let c = self
            .concepts
            .iter_mut()
            .find(|c| c.question == question)
            .ok_or_else(|| CpmError::NotFound(format!("synthetic concept {question:?}")))?;
        c.prior = match c.prior {
            SignPrior::Risk => SignPrior::Protective,
            SignPrior::Protective => SignPrior::Risk,
            SignPrior::Unknown => SignPrior::Unknown,
        };
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(CpmError::InvalidArgument("at least one group is required".into()));
        }
        for g in &self.groups {
            if g.coefficients.len() != self.concepts.len() || g.prevalences.len() != self.concepts.len() {
                return Err(CpmError::DimensionMismatch(
                    "group coefficients and prevalences must match the concepts".into(),
                ));
            }
            if g.prevalences.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(CpmError::InvalidArgument("prevalences must lie in [0, 1]".into()));
            }
        }
        if self.noise_per_note > self.noise_pool {
            return Err(CpmError::InvalidArgument("noise_per_note exceeds noise_pool".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SynthCorpus> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let pool: Vec<String> = (0..self.noise_pool).map(|i| format!("incidental finding {i:02}")).collect();
        let mut items = Vec::new();
        let mut notes = BTreeMap::new();
        let mut bayes_auc = BTreeMap::new();
        let mut counter = 0usize;
        for group in &self.groups {
            let informative: Vec<(f64, f64)> = group
                .coefficients
                .iter()
                .zip(&group.prevalences)
                .filter(|(b, _)| **b != 0.0)
                .map(|(&b, &p)| (b, p))
                .collect();
            bayes_auc.insert(group.name.clone().unwrap_or_default(), exact_bayes_auc(group.intercept, &informative)?);
            for _ in 0..group.n_notes {
                let id = format!("syn-{counter:05}");
                counter += 1;
                let present: BTreeSet<usize> = (0..self.concepts.len())
                    .filter(|&j| rng.random_bool(group.prevalences[j]))
                    .collect();
                let eta = group.intercept + present.iter().map(|&j| group.coefficients[j]).sum::<f64>();
                let label = u8::from(rng.random_bool(sigmoid(eta)));
                let mut phrases: Vec<String> = present
                    .iter()
                    .flat_map(|&j| self.concepts[j].keyphrases.iter().cloned())
                    .collect();
                let mut noise: Vec<usize> = (0..pool.len()).collect();
                for i in 0..self.noise_per_note {
                    let pick = rng.random_range(i..noise.len());
                    noise.swap(i, pick);
                    phrases.push(pool[noise[i]].clone());
                }
                let text = format!("Encounter note. Findings: {}.", phrases.join("; "));
                let mut note = Note::new(id.clone(), text);
                note.group = group.name.clone();
                items.push(LabeledNote::new(note, label));
                notes.insert(
                    id,
                    OracleNote {
                        true_concepts: present,
                        keyphrases: phrases,
                    },
                );
            }
        }
        let world = OracleWorld {
            concepts: self
                .concepts
                .iter()
                .map(|c| OracleConcept {
                    question: c.question.clone(),
                    prior: c.prior,
                    keyphrases: c.keyphrases.clone(),
                })
                .collect(),
            notes,
        };
        let informative = self
            .concepts
            .iter()
            .enumerate()
            .filter(|(j, _)| self.groups.iter().any(|g| g.coefficients[*j] != 0.0))
            .map(|(_, c)| c.question.clone())
            .collect();
        Ok(SynthCorpus {
            corpus: Corpus::new(items, format!("synthetic:seed={}", self.seed))?,
            world,
            bayes_auc,
            informative,
        })
    }
}

/// AUC of the true linear predictor under independent Bernoulli concepts
/// with a logistic outcome, by enumerating every concept configuration.
pub fn exact_bayes_auc(intercept: f64, concepts: &[(f64, f64)]) -> Result<f64> {
    if concepts.len() > MAX_ENUMERATED_CONCEPTS {
        return Err(CpmError::InvalidArgument(format!(
            "exact enumeration supports at most {MAX_ENUMERATED_CONCEPTS} concepts"
        )));
    }
    // (score, P(config, y=1), P(config, y=0))
    let mut cells: Vec<(f64, f64, f64)> = (0..1usize << concepts.len())
        .map(|mask| {
            let mut p = 1.0;
            let mut eta = intercept;
            for (j, &(b, prev)) in concepts.iter().enumerate() {
                if mask >> j & 1 == 1 {
                    p *= prev;
                    eta += b;
                } else {
                    p *= 1.0 - prev;
                }
            }
            let r = sigmoid(eta);
            (eta, p * r, p * (1.0 - r))
        })
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pos: f64 = cells.iter().map(|c| c.1).sum();
    let neg: f64 = cells.iter().map(|c| c.2).sum();
    if pos <= 0.0 || neg <= 0.0 {
        return Err(CpmError::DegenerateLabels("generative model has a single class".into()));
    }
    let mut neg_below = 0.0;
    let mut total = 0.0;
    let mut i = 0;
    while i < cells.len() {
        let mut j = i;
        let (mut tie_pos, mut tie_neg) = (0.0, 0.0);
        while j < cells.len() && cells[j].0 == cells[i].0 {
            tie_pos += cells[j].1;
            tie_neg += cells[j].2;
            j += 1;
        }
        total += tie_pos * (neg_below + 0.5 * tie_neg);
        neg_below += tie_neg;
        i = j;
    }
    Ok(total / (pos * neg))
}
