//! Deterministic stand-in LLM that answers from a planted ground truth.
//!
//! The world lists candidate concepts (question, reported prior, trigger
//! keyphrases) and, per note, which concepts are true and which keyphrases
//! the note yields. Annotation answers come from the truth table, flipped
//! with probability `noise_rate` by a hash of (seed, note, question).
//! Proposals pick world concepts whose keyphrases appear among the ranked
//! keyphrases, in rank order, and pad with the remaining concepts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{BackendError, ChatBackend, ChatRequest, RequestContext};
use crate::error::{CpmError, Result};
use crate::model::SignPrior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConcept {
    pub question: String,
    /// Prior the mock reports when proposing this concept.
    pub prior: SignPrior,
    pub keyphrases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleNote {
    /// Indices into `OracleWorld::concepts` answered "yes".
    pub true_concepts: BTreeSet<usize>,
    pub keyphrases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleWorld {
    pub concepts: Vec<OracleConcept>,
    pub notes: BTreeMap<String, OracleNote>,
}

impl OracleWorld {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CpmError::io(path, e))?;
        let world: OracleWorld = serde_json::from_str(&text)?;
        world.validate()?;
        Ok(world)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| CpmError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        for (id, note) in &self.notes {
            if let Some(bad) = note.true_concepts.iter().find(|&&c| c >= self.concepts.len()) {
                return Err(CpmError::InvalidArgument(format!(
                    "oracle note {id} references concept {bad}, world has {}",
                    self.concepts.len()
                )));
            }
        }
        Ok(())
    }

    pub fn concept_index(&self, question: &str) -> Option<usize> {
        let q = question.trim();
        self.concepts.iter().position(|c| c.question == q)
    }

    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("world serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

pub struct OracleMock {
    world: OracleWorld,
    noise_rate: f64,
    seed: u64,
    fingerprint: String,
    phrase_owners: HashMap<String, Vec<usize>>,
}

impl OracleMock {
    pub fn new(world: OracleWorld, noise_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise_rate) {
            return Err(CpmError::InvalidArgument(format!(
                "noise rate must lie in [0, 1], got {noise_rate}"
            )));
        }
        world.validate()?;
        let mut phrase_owners: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, c) in world.concepts.iter().enumerate() {
            for p in &c.keyphrases {
                phrase_owners.entry(p.to_lowercase()).or_default().push(i);
            }
        }
        Ok(OracleMock {
            fingerprint: world.fingerprint(),
            world,
            noise_rate,
            seed,
            phrase_owners,
        })
    }

    pub fn world(&self) -> &OracleWorld {
        &self.world
    }

    fn unit_hash(&self, parts: &[&str]) -> f64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for p in parts {
            h.update(p.as_bytes());
            h.update([0]);
        }
        let digest = h.finalize();
        let word = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        (word >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn truth(&self, note_id: &str, question: &str) -> bool {
        let Some(note) = self.world.notes.get(note_id) else {
            return false;
        };
        self.world
            .concept_index(question)
            .is_some_and(|c| note.true_concepts.contains(&c))
    }

    fn answer(&self, note_id: &str, question: &str) -> bool {
        let truth = self.truth(note_id, question);
        if self.noise_rate > 0.0 && self.unit_hash(&[note_id, question.trim()]) < self.noise_rate {
            !truth
        } else {
            truth
        }
    }

    fn propose(&self, request: &ChatRequest, top: &[String], current: &[String], count: usize) -> String {
        let taken: BTreeSet<&str> = current.iter().map(|s| s.trim()).collect();
        let mut chosen: Vec<usize> = Vec::new();
        for phrase in top {
            if let Some(owners) = self.phrase_owners.get(&phrase.to_lowercase()) {
                for &c in owners {
                    if !chosen.contains(&c) && !taken.contains(self.world.concepts[c].question.as_str()) {
                        chosen.push(c);
                    }
                }
            }
        }
        let mut rest: Vec<usize> = (0..self.world.concepts.len())
            .filter(|c| !chosen.contains(c) && !taken.contains(self.world.concepts[*c].question.as_str()))
            .collect();
        if request.params.temperature > 0.0 {
            let mut digest = Sha256::new();
            digest.update(self.seed.to_le_bytes());
            digest.update(request.key.as_bytes());
            let bytes: [u8; 32] = digest.finalize().into();
            rest.shuffle(&mut ChaCha8Rng::from_seed(bytes));
        }
        chosen.extend(rest);
        chosen.truncate(count);
        let items: Vec<serde_json::Value> = chosen
            .into_iter()
            .map(|c| {
                let concept = &self.world.concepts[c];
                serde_json::json!({"question": concept.question, "prior": concept.prior})
            })
            .collect();
        serde_json::Value::Array(items).to_string()
    }
}

impl ChatBackend for OracleMock {
    fn identity(&self) -> String {
        format!(
            "oracle-mock:world={}:noise={}:seed={}",
            self.fingerprint, self.noise_rate, self.seed
        )
    }

    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        Ok(match &request.context {
            RequestContext::Keyphrase { note_id } => {
                let phrases = self
                    .world
                    .notes
                    .get(note_id)
                    .map(|n| n.keyphrases.clone())
                    .unwrap_or_default();
                serde_json::to_string(&phrases).expect("strings serialize")
            }
            RequestContext::Proposal {
                top_keyphrases,
                current_concepts,
                count,
            } => self.propose(request, top_keyphrases, current_concepts, *count),
            RequestContext::Annotation { note_id, question } => {
                if self.answer(note_id, question) { "Yes" } else { "No" }.to_string()
            }
        })
    }
}
