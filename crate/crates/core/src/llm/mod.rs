//! Prompt rendering, backend calls, response parsing and caching.
//!
//! The [`Gateway`] is the only path from the search loop to a language
//! model. It renders a role's template, derives a content-hash cache key,
//! consults the cache, retries transport failures with exponential backoff,
//! and retries unparseable responses once with a format reminder.

pub mod backend;
pub mod cache;
pub mod oracle;
pub mod parse;
pub mod template;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

pub use backend::{BackendError, BackendSpec, ChatBackend, ChatRequest, DecodeParams, RequestContext};
pub use cache::{CacheStats, ResponseCache};
pub use oracle::{OracleConcept, OracleMock, OracleNote, OracleWorld};
pub use template::{PromptRole, PromptTemplate};

use crate::error::{CpmError, Result};
use crate::keyphrase::RankedKeyphrase;
use crate::model::{AnnotationColumn, Concept, ConceptOrigin, Note};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub transport_retries: u32,
    pub base_backoff: Duration,
    pub parse_retries: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            transport_retries: 2,
            base_backoff: Duration::from_millis(500),
            parse_retries: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyphraseResult {
    pub phrases: Vec<String>,
    pub failed: bool,
}

#[derive(Debug, Clone, Copy)]
pub enum ProposalContext<'a> {
    Init {
        k: usize,
    },
    Replace {
        m: usize,
        current: &'a [Option<Concept>],
        slot_index: usize,
    },
}

impl ProposalContext<'_> {
    fn role(&self) -> PromptRole {
        match self {
            ProposalContext::Init { .. } => PromptRole::InitProposal,
            ProposalContext::Replace { .. } => PromptRole::ReplaceProposal,
        }
    }

    pub fn requested(&self) -> usize {
        match self {
            ProposalContext::Init { k } => *k,
            ProposalContext::Replace { m, .. } => *m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedProposal {
    pub question: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub concepts: Vec<Concept>,
    pub requested: usize,
    pub shortfall: usize,
    pub rejected: Vec<RejectedProposal>,
    pub parse_failed: bool,
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    identity: String,
    cache: Arc<ResponseCache>,
    retry: RetryPolicy,
    backend_calls: AtomicU64,
}

fn ranked_lines(top: &[RankedKeyphrase]) -> String {
    top.iter()
        .enumerate()
        .map(|(i, k)| {
            let sign = if k.coefficient >= 0.0 { "+" } else { "-" };
            format!("{}. {} ({sign})", i + 1, k.phrase)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn concept_lines(current: &[Option<Concept>], slot_index: usize) -> String {
    current
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let text = c.as_ref().map_or("(empty slot)", |c| c.question.as_str());
            let mark = if i == slot_index { " [REPLACE]" } else { "" };
            format!("{}. {text}{mark}", i + 1)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, cache: Arc<ResponseCache>) -> Self {
        Gateway {
            identity: backend.identity(),
            backend,
            cache,
            retry: RetryPolicy::default(),
            backend_calls: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backend_identity(&self) -> &str {
        &self.identity
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.stats()
    }

    /// Number of requests that reached the backend (retries included).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn request_key(
        &self,
        template: &PromptTemplate,
        vars: &BTreeMap<String, String>,
        params: DecodeParams,
        reminder: bool,
    ) -> String {
        let material = json!({
            "template": template.fingerprint(),
            "vars": vars,
            "backend": self.identity,
            "params": params,
            "reminder": reminder,
        });
        hex::encode(Sha256::digest(material.to_string().as_bytes()))
    }

    fn build(
        &self,
        template: &PromptTemplate,
        vars: BTreeMap<String, String>,
        params: DecodeParams,
        context: RequestContext,
        reminder: bool,
    ) -> Result<ChatRequest> {
        Ok(ChatRequest {
            role: template.role,
            prompt: template.render(&vars, reminder)?,
            key: self.request_key(template, &vars, params, reminder),
            params,
            context,
        })
    }

    fn expect_role(template: &PromptTemplate, role: PromptRole) -> Result<()> {
        if template.role != role {
            return Err(CpmError::InvalidArgument(format!(
                "expected a {role} template, got {}",
                template.role
            )));
        }
        Ok(())
    }

    pub fn keyphrase_request(
        &self,
        note: &Note,
        template: &PromptTemplate,
        reminder: bool,
    ) -> Result<ChatRequest> {
        Self::expect_role(template, PromptRole::Keyphrase)?;
        let vars = BTreeMap::from([("note".to_string(), note.text.clone())]);
        let context = RequestContext::Keyphrase {
            note_id: note.note_id.clone(),
        };
        self.build(template, vars, DecodeParams::EXTRACTION, context, reminder)
    }

    pub fn annotation_request(
        &self,
        note: &Note,
        question: &str,
        template: &PromptTemplate,
        reminder: bool,
    ) -> Result<ChatRequest> {
        Self::expect_role(template, PromptRole::Annotation)?;
        let vars = BTreeMap::from([
            ("note".to_string(), note.text.clone()),
            ("question".to_string(), question.to_string()),
        ]);
        let context = RequestContext::Annotation {
            note_id: note.note_id.clone(),
            question: question.to_string(),
        };
        self.build(template, vars, DecodeParams::EXTRACTION, context, reminder)
    }

    pub fn proposal_request(
        &self,
        template: &PromptTemplate,
        top: &[RankedKeyphrase],
        context: ProposalContext<'_>,
        reminder: bool,
    ) -> Result<ChatRequest> {
        Self::expect_role(template, context.role())?;
        let mut vars = BTreeMap::from([("top_keyphrases".to_string(), ranked_lines(top))]);
        let current_questions = match context {
            ProposalContext::Init { k } => {
                vars.insert("k".to_string(), k.to_string());
                Vec::new()
            }
            ProposalContext::Replace {
                m,
                current,
                slot_index,
            } => {
                vars.insert("m".to_string(), m.to_string());
                vars.insert("current_concepts".to_string(), concept_lines(current, slot_index));
                current.iter().flatten().map(|c| c.question.clone()).collect()
            }
        };
        let ctx = RequestContext::Proposal {
            top_keyphrases: top.iter().map(|k| k.phrase.clone()).collect(),
            current_concepts: current_questions,
            count: context.requested(),
        };
        self.build(template, vars, DecodeParams::PROPOSAL, ctx, reminder)
    }

    fn send_with_retry(&self, request: &ChatRequest) -> Result<String> {
        let mut attempt = 0u32;
        loop {
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.send(request) {
                Ok(text) => return Ok(text),
                Err(BackendError::Transport(e)) if attempt < self.retry.transport_retries => {
                    tracing::warn!(attempt, error = %e, "transport error, retrying");
                    std::thread::sleep(self.retry.base_backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(CpmError::Backend(e.to_string())),
            }
        }
    }

    /// Cached call of one request.
    pub fn call(&self, request: &ChatRequest) -> Result<String> {
        self.cache
            .get_or_compute(&request.key, || self.send_with_retry(request))
    }

    /// Asks, parses, and re-asks with a format reminder on parse failure.
    fn ask<T>(
        &self,
        build: impl Fn(bool) -> Result<ChatRequest>,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<Option<T>> {
        for attempt in 0..=self.retry.parse_retries {
            let request = build(attempt > 0)?;
            let raw = self.call(&request)?;
            if let Some(parsed) = parse(&raw) {
                return Ok(Some(parsed));
            }
            tracing::debug!(role = %request.role, attempt, "unparseable response");
        }
        Ok(None)
    }

    pub fn extract_keyphrases(&self, note: &Note, template: &PromptTemplate) -> Result<KeyphraseResult> {
        Self::expect_role(template, PromptRole::Keyphrase)?;
        let parsed = self.ask(
            |reminder| self.keyphrase_request(note, template, reminder),
            parse::parse_keyphrases,
        )?;
        Ok(match parsed {
            Some(phrases) => KeyphraseResult {
                phrases,
                failed: false,
            },
            None => KeyphraseResult {
                phrases: Vec::new(),
                failed: true,
            },
        })
    }

    /// Requests concepts and keeps the well-formed ones. Items without a
    /// trailing `?`, items violating `required_prefix`, and duplicates are
    /// dropped and counted in the shortfall.
    pub fn propose_concepts(
        &self,
        template: &PromptTemplate,
        top: &[RankedKeyphrase],
        context: ProposalContext<'_>,
        required_prefix: Option<&str>,
    ) -> Result<Proposal> {
        Self::expect_role(template, context.role())?;
        let requested = context.requested();
        let parsed = self.ask(
            |reminder| self.proposal_request(template, top, context, reminder),
            parse::parse_proposals,
        )?;
        let Some(items) = parsed else {
            return Ok(Proposal {
                concepts: Vec::new(),
                requested,
                shortfall: requested,
                rejected: Vec::new(),
                parse_failed: true,
            });
        };
        let origin = match context {
            ProposalContext::Init { .. } => ConceptOrigin::Initialization,
            ProposalContext::Replace { .. } => ConceptOrigin::Proposal,
        };
        let mut concepts: Vec<Concept> = Vec::new();
        let mut rejected = Vec::new();
        for item in items.into_iter().take(requested) {
            let reject = |reason: &str| RejectedProposal {
                question: item.question.clone(),
                reason: reason.to_string(),
            };
            match Concept::new(item.question.clone(), item.prior, origin) {
                Err(_) => rejected.push(reject("not a question ending in `?`")),
                Ok(c) if !c.matches_prefix(required_prefix) => {
                    rejected.push(reject("does not start with the required prefix"))
                }
                Ok(c) if concepts.iter().any(|e| e.question == c.question) => {
                    rejected.push(reject("duplicate question"))
                }
                Ok(c) => concepts.push(c),
            }
        }
        Ok(Proposal {
            shortfall: requested.saturating_sub(concepts.len()),
            concepts,
            requested,
            rejected,
            parse_failed: false,
        })
    }

    /// Yes/no answers of `concept` for every note, in input order.
    /// Unparseable answers become 0 with the failure flag set.
    pub fn annotate(
        &self,
        notes: &[&Note],
        concept: &Concept,
        template: &PromptTemplate,
        concurrency_limit: usize,
    ) -> Result<AnnotationColumn> {
        Self::expect_role(template, PromptRole::Annotation)?;
        let workers = concurrency_limit.max(1).min(notes.len().max(1));
        let next = AtomicUsize::new(0);
        let answer = |note: &Note| {
            self.ask(
                |reminder| self.annotation_request(note, &concept.question, template, reminder),
                parse::parse_yes_no,
            )
        };
        let mut results: Vec<(usize, Result<Option<bool>>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    scope.spawn(|| {
                        let mut local = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::SeqCst);
                            if i >= notes.len() {
                                break;
                            }
                            local.push((i, answer(notes[i])));
                        }
                        local
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("annotation worker panicked"))
                .collect()
        });
        results.sort_by_key(|(i, _)| *i);
        let mut column = AnnotationColumn {
            values: Vec::with_capacity(notes.len()),
            failed: Vec::with_capacity(notes.len()),
        };
        for (_, result) in results {
            match result? {
                Some(yes) => {
                    column.values.push(u8::from(yes));
                    column.failed.push(false);
                }
                None => {
                    column.values.push(0);
                    column.failed.push(true);
                }
            }
        }
        Ok(column)
    }
}
