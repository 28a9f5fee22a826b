//! Greedy concept search.
//!
//! A seed initializes a k-slot concept model from an unadjusted keyphrase
//! ranking, then sweeps the slots cyclically. For each slot it re-ranks
//! keyphrases adjusting for the other concepts, asks for m replacement
//! candidates, annotates them and keeps the best one only if it strictly
//! improves validation AUC.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::config::RoundConfig;
use crate::corpus_io::{filter_corpus, ExclusionReport, Predicate};
use crate::error::{CpmError, Result};
use crate::glm::{self, DesignMatrix, FitOptions, PenaltySpec, RowSplit};
use crate::keyphrase::{build_vocab, rank_keyphrases, KeyphraseVocabulary, RankedKeyphrase};
use crate::llm::{Gateway, PromptRole, PromptTemplate, ProposalContext};
use crate::metrics::{self, metric_report, prevalence_ci, MetricReport, ReportOptions};
use crate::model::{
    apply_group_weights, make_split, AnnotationColumn, AnnotationMatrix, CompletedSeed, Concept,
    ConceptSummary, Corpus, DataSplit, FittedCPM, Note, Prediction, RunRecord, SeedMetrics,
    SeedOutcome, SeedRecord,
};

pub const PREVALENCE_LEVEL: f64 = 0.95;

pub const PENALTY_NOTE: &str = "concept models use a fixed lasso strength (cpm_l1) on \
mean weighted log-loss; keyphrase ridge strength is chosen on a nested split of the \
training notes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceReason {
    Improved,
    NoImprovement,
    SignRejected,
    ProposalEmpty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEval {
    pub concept: Concept,
    pub annotation_failures: usize,
    /// Concepts of the fitted model, in slot order with the candidate in place.
    pub model_questions: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// The candidate's own fitted coefficient.
    pub coefficient: f64,
    pub validation_auc: f64,
    /// The candidate's own coefficient agrees with its sign prior.
    pub sign_ok: bool,
    /// Every other concept's coefficient agrees with its prior.
    pub others_sign_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub sweep_index: usize,
    pub slot_index: usize,
    pub incumbent: Option<Concept>,
    /// Validation AUC of the working model before this step.
    pub incumbent_auc: f64,
    pub candidates: Vec<CandidateEval>,
    pub accepted: Option<Concept>,
    pub accepted_auc: Option<f64>,
    pub reason: TraceReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub applicable: bool,
    pub mean_pairwise_jaccard: Option<f64>,
    pub pairs: Vec<SeedPairOverlap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPairOverlap {
    pub seed_a: u64,
    pub seed_b: u64,
    pub jaccard: f64,
}

/// Mean pairwise Jaccard overlap of the question sets of each seed.
pub fn stability(concept_sets: &[(u64, BTreeSet<String>)]) -> StabilityReport {
    if concept_sets.len() < 2 {
        return StabilityReport {
            applicable: false,
            mean_pairwise_jaccard: None,
            pairs: Vec::new(),
        };
    }
    let mut pairs = Vec::new();
    for (i, (sa, a)) in concept_sets.iter().enumerate() {
        for (sb, b) in &concept_sets[i + 1..] {
            let union = a.union(b).count();
            let jaccard = if union == 0 {
                1.0
            } else {
                a.intersection(b).count() as f64 / union as f64
            };
            pairs.push(SeedPairOverlap {
                seed_a: *sa,
                seed_b: *sb,
                jaccard,
            });
        }
    }
    let mean = pairs.iter().map(|p| p.jaccard).sum::<f64>() / pairs.len() as f64;
    StabilityReport {
        applicable: true,
        mean_pairwise_jaccard: Some(mean),
        pairs,
    }
}

/// Identifies a round; supplied by the caller so output is reproducible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub round_index: u32,
    pub created_at: DateTime<Utc>,
}

/// The corpus a round actually learns from.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCorpus {
    pub corpus: Corpus,
    pub exclusions: ExclusionReport,
}

/// Applies the configured exclusions, then the group weighting.
pub fn prepare_corpus(corpus: &Corpus, config: &RoundConfig) -> Result<PreparedCorpus> {
    let mut predicates = Vec::new();
    if !config.excluded_note_ids.is_empty() {
        predicates.push(Predicate::IdNotIn {
            ids: config.excluded_note_ids.clone(),
        });
    }
    predicates.extend(config.exclusion_predicates.iter().cloned());
    let (filtered, exclusions) = filter_corpus(corpus, &predicates)?;
    let corpus = match &config.group_weighting {
        Some(weights) => apply_group_weights(&filtered, weights)?,
        None => filtered,
    };
    Ok(PreparedCorpus { corpus, exclusions })
}

pub type KeyphraseTable = BTreeMap<String, Vec<String>>;

/// Keyphrases for every note, extracted with bounded concurrency. Notes
/// whose response cannot be parsed get an empty list.
pub fn extract_keyphrases(corpus: &Corpus, config: &RoundConfig, gateway: &Gateway) -> Result<KeyphraseTable> {
    let template = config.prompts.template(PromptRole::Keyphrase)?;
    let notes: Vec<&Note> = corpus.items().iter().map(|i| &i.note).collect();
    let results = parallel_map(&notes, config.concurrency_limit, |note| {
        gateway.extract_keyphrases(note, &template)
    });
    let mut table = KeyphraseTable::new();
    let mut failed = 0;
    for (note, result) in notes.iter().zip(results) {
        let result = result?;
        failed += usize::from(result.failed);
        table.insert(note.note_id.clone(), result.phrases);
    }
    if failed > 0 {
        tracing::warn!(failed, "keyphrase extraction failed for some notes");
    }
    Ok(table)
}

fn parallel_map<T: Sync, R: Send>(items: &[T], limit: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = limit.max(1).min(items.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut out: Vec<(usize, R)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                        if i >= items.len() {
                            break;
                        }
                        local.push((i, f(&items[i])));
                    }
                    local
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

struct Templates {
    init: PromptTemplate,
    replace: PromptTemplate,
    annotation: PromptTemplate,
}

/// Search state of one seed.
pub struct SeedSearch<'a> {
    corpus: &'a Corpus,
    notes: Vec<&'a Note>,
    labels: Vec<u8>,
    weights: Vec<f64>,
    split: DataSplit,
    rows: RowSplit,
    keyphrases: &'a KeyphraseTable,
    vocab: KeyphraseVocabulary,
    config: &'a RoundConfig,
    gateway: &'a Gateway,
    templates: Templates,
    columns: HashMap<String, AnnotationColumn>,
    slots: Vec<Option<Concept>>,
    model: FittedCPM,
    initial: FittedCPM,
}

impl<'a> SeedSearch<'a> {
    /// Splits, builds the training vocabulary, proposes and annotates the
    /// initial concepts and fits the first model.
    pub fn initialize(
        corpus: &'a Corpus,
        keyphrases: &'a KeyphraseTable,
        config: &'a RoundConfig,
        gateway: &'a Gateway,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let split = make_split(corpus, config.split_fraction, seed)?;
        let train_phrases: Vec<&[String]> = split
            .train_ids
            .iter()
            .map(|id| keyphrases.get(id).map_or(&[][..], Vec::as_slice))
            .collect();
        let vocab = build_vocab(&train_phrases.iter().map(|p| p.to_vec()).collect::<Vec<_>>(), config.min_df)?;
        let ids = corpus.ids();
        let templates = Templates {
            init: config.prompts.template(PromptRole::InitProposal)?,
            replace: config.prompts.template(PromptRole::ReplaceProposal)?,
            annotation: config.prompts.template(PromptRole::Annotation)?,
        };
        let placeholder = FittedCPM {
            concepts: Vec::new(),
            coefficients: Vec::new(),
            intercept: 0.0,
            penalty: PenaltySpec::lasso(config.cpm_l1),
            split_seed: seed,
            validation_metric: 0.5,
        };
        let mut search = SeedSearch {
            notes: corpus.items().iter().map(|i| &i.note).collect(),
            labels: corpus.items().iter().map(|i| i.label).collect(),
            weights: corpus.items().iter().map(|i| i.weight).collect(),
            rows: RowSplit::from_split(&split, &ids),
            corpus,
            split,
            keyphrases,
            vocab,
            config,
            gateway,
            templates,
            columns: HashMap::new(),
            slots: Vec::new(),
            model: placeholder.clone(),
            initial: placeholder,
        };

        let ranking = rank_keyphrases(
            &search.vocab,
            corpus,
            keyphrases,
            &search.split,
            None,
            config.top_keyphrase_count,
        )?;
        let concepts = search.propose_initial(&ranking.ranked)?;
        if concepts.is_empty() {
            return Err(CpmError::ProposalEmpty(
                "initial proposal yielded no usable concept".into(),
            ));
        }
        if concepts.len() < config.k {
            tracing::warn!(
                seed,
                got = concepts.len(),
                k = config.k,
                "proceeding with fewer concept slots than requested"
            );
        }
        for c in &concepts {
            search.column(c)?;
        }
        let mut slots: Vec<Option<Concept>> = concepts.into_iter().map(Some).collect();
        let mut model = search.fit_slots(&slots)?;
        if config.require_sign_match {
            // Vacate slots whose fitted sign disagrees with the prior until none do.
            loop {
                let bad: BTreeSet<&str> = model
                    .concepts
                    .iter()
                    .zip(&model.coefficients)
                    .filter(|(c, &b)| !c.sign_prior.agrees_with(b))
                    .map(|(c, _)| c.question.as_str())
                    .collect();
                if bad.is_empty() {
                    break;
                }
                tracing::info!(seed, vacated = bad.len(), "initial concepts violate their sign prior");
                for slot in slots.iter_mut() {
                    if slot.as_ref().is_some_and(|c| bad.contains(c.question.as_str())) {
                        *slot = None;
                    }
                }
                model = search.fit_slots(&slots)?;
            }
        }
        search.slots = slots;
        search.initial = model.clone();
        search.model = model;
        Ok(search)
    }

    fn propose_initial(&self, top: &[RankedKeyphrase]) -> Result<Vec<Concept>> {
        let k = self.config.k;
        let prefix = self.config.question_prefix.as_deref();
        let first = self
            .gateway
            .propose_concepts(&self.templates.init, top, ProposalContext::Init { k }, prefix)?;
        let mut concepts = first.concepts;
        if concepts.len() < k {
            let retry = self.gateway.propose_concepts(
                &self.templates.init,
                top,
                ProposalContext::Init { k: k - concepts.len() },
                prefix,
            )?;
            for c in retry.concepts {
                if concepts.len() < k && concepts.iter().all(|e| e.question != c.question) {
                    concepts.push(c);
                }
            }
        }
        Ok(concepts)
    }

    pub fn split(&self) -> &DataSplit {
        &self.split
    }

    pub fn vocabulary(&self) -> &KeyphraseVocabulary {
        &self.vocab
    }

    pub fn model(&self) -> &FittedCPM {
        &self.model
    }

    pub fn initial_model(&self) -> &FittedCPM {
        &self.initial
    }

    pub fn slots(&self) -> &[Option<Concept>] {
        &self.slots
    }

    fn column(&mut self, concept: &Concept) -> Result<&AnnotationColumn> {
        if !self.columns.contains_key(&concept.question) {
            let column = self.gateway.annotate(
                &self.notes,
                concept,
                &self.templates.annotation,
                self.config.concurrency_limit,
            )?;
            self.columns.insert(concept.question.clone(), column);
        }
        Ok(&self.columns[&concept.question])
    }

    /// Fits the lasso concept model over the occupied slots on the training
    /// rows and scores it on the validation rows.
    fn fit_slots(&self, slots: &[Option<Concept>]) -> Result<FittedCPM> {
        let concepts: Vec<Concept> = slots.iter().flatten().cloned().collect();
        let columns: Vec<&AnnotationColumn> = concepts
            .iter()
            .map(|c| {
                self.columns
                    .get(&c.question)
                    .ok_or_else(|| CpmError::NotFound(format!("annotations for {:?}", c.question)))
            })
            .collect::<Result<_>>()?;
        fit_cpm(
            concepts,
            &columns,
            &self.labels,
            &self.weights,
            &self.rows,
            self.config.cpm_l1,
            self.split.seed,
        )
    }

    fn annotation_matrix(&self, slots: &[Option<Concept>]) -> Result<AnnotationMatrix> {
        let concepts: Vec<Concept> = slots.iter().flatten().cloned().collect();
        let columns: Vec<AnnotationColumn> = concepts.iter().map(|c| self.columns[&c.question].clone()).collect();
        AnnotationMatrix::from_columns(self.corpus.ids(), concepts, &columns)
    }

    /// One cyclic pass over the slots.
    pub fn sweep(&mut self, sweep_index: usize) -> Vec<IterationTrace> {
        (0..self.slots.len())
            .map(|slot| {
                let incumbent = self.slots[slot].clone();
                let incumbent_auc = self.model.validation_metric;
                self.step(sweep_index, slot).unwrap_or_else(|e| {
                    tracing::warn!(sweep_index, slot, error = %e, "slot step failed");
                    IterationTrace {
                        sweep_index,
                        slot_index: slot,
                        incumbent,
                        incumbent_auc,
                        candidates: Vec::new(),
                        accepted: None,
                        accepted_auc: None,
                        reason: TraceReason::ProposalEmpty,
                        detail: Some(e.to_string()),
                    }
                })
            })
            .collect()
    }

    fn step(&mut self, sweep_index: usize, slot: usize) -> Result<IterationTrace> {
        let incumbent = self.slots[slot].clone();
        let incumbent_auc = self.model.validation_metric;
        let mut others = self.slots.clone();
        others[slot] = None;
        let fixed = self.annotation_matrix(&others)?;
        let ranking = rank_keyphrases(
            &self.vocab,
            self.corpus,
            self.keyphrases,
            &self.split,
            (!fixed.concepts.is_empty()).then_some(&fixed),
            self.config.top_keyphrase_count,
        )?;
        let proposal = self.gateway.propose_concepts(
            &self.templates.replace,
            &ranking.ranked,
            ProposalContext::Replace {
                m: self.config.m,
                current: &self.slots,
                slot_index: slot,
            },
            self.config.question_prefix.as_deref(),
        )?;
        let active: BTreeSet<&str> = self.slots.iter().flatten().map(|c| c.question.as_str()).collect();
        let fresh: Vec<Concept> = proposal
            .concepts
            .into_iter()
            .filter(|c| !active.contains(c.question.as_str()))
            .collect();
        let base = |reason, detail: Option<String>| IterationTrace {
            sweep_index,
            slot_index: slot,
            incumbent: incumbent.clone(),
            incumbent_auc,
            candidates: Vec::new(),
            accepted: None,
            accepted_auc: None,
            reason,
            detail,
        };
        if fresh.is_empty() {
            let detail = if proposal.parse_failed {
                "proposal response could not be parsed"
            } else {
                "no usable candidate was proposed"
            };
            return Ok(base(TraceReason::ProposalEmpty, Some(detail.into())));
        }

        let mut candidates = Vec::with_capacity(fresh.len());
        let mut models = Vec::with_capacity(fresh.len());
        for concept in fresh {
            let failures = self.column(&concept)?.failures();
            let mut slots = self.slots.clone();
            slots[slot] = Some(concept.clone());
            let model = self.fit_slots(&slots)?;
            let position = slots[..slot].iter().flatten().count();
            let own = model.coefficients[position];
            let others_sign_ok = model
                .concepts
                .iter()
                .zip(&model.coefficients)
                .enumerate()
                .all(|(i, (c, &b))| i == position || c.sign_prior.agrees_with(b));
            candidates.push(CandidateEval {
                sign_ok: concept.sign_prior.agrees_with(own),
                concept,
                annotation_failures: failures,
                model_questions: model.questions().iter().map(|q| q.to_string()).collect(),
                coefficients: model.coefficients.clone(),
                intercept: model.intercept,
                coefficient: own,
                validation_auc: model.validation_metric,
                others_sign_ok,
            });
            models.push(model);
        }

        // The single best candidate decides; ties keep the earlier proposal.
        // A candidate the lasso zeroes out would leave the slot empty, so it
        // is never selected.
        let best = candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.coefficient != 0.0)
            .fold(None::<(usize, f64)>, |best, (i, c)| match best {
                Some((_, auc)) if auc >= c.validation_auc => best,
                _ => Some((i, c.validation_auc)),
            });
        let mut trace = base(TraceReason::NoImprovement, None);
        if let Some((i, auc)) = best.filter(|&(_, auc)| auc > incumbent_auc) {
            let c = &candidates[i];
            if self.config.require_sign_match && !(c.sign_ok && c.others_sign_ok) {
                trace.reason = TraceReason::SignRejected;
            } else {
                let concept = c.concept.clone();
                self.slots[slot] = Some(concept.clone());
                self.model = models.swap_remove(i);
                trace.accepted = Some(concept);
                trace.accepted_auc = Some(auc);
                trace.reason = TraceReason::Improved;
            }
        }
        trace.candidates = candidates;
        Ok(trace)
    }

    /// Sweeps until a sweep makes no replacement or `max_iterations` sweeps
    /// have run, then scores the final model.
    pub fn run(mut self) -> Result<CompletedSeed> {
        let mut traces = Vec::new();
        let mut converged = false;
        let mut sweeps_run = 0;
        while sweeps_run < self.config.max_iterations {
            let sweep = self.sweep(sweeps_run);
            sweeps_run += 1;
            let replaced = sweep.iter().any(|t| t.accepted.is_some());
            traces.extend(sweep);
            if !replaced {
                converged = true;
                break;
            }
        }
        let annotations = self.annotation_matrix(&self.slots)?;
        let metrics = seed_metrics(
            self.corpus,
            &self.model,
            &annotations,
            &self.split,
            self.config,
        )?;
        Ok(CompletedSeed {
            split: self.split,
            initial: self.initial,
            traces,
            sweeps_run,
            converged,
            annotations,
            final_model: self.model,
            metrics,
        })
    }
}

fn train_design(columns: &[&AnnotationColumn], rows: &[usize], names: Vec<String>) -> Result<DesignMatrix> {
    let data: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| rows.iter().map(|&r| f64::from(c.values[r])).collect())
        .collect();
    let p = data.len();
    DesignMatrix::from_columns(rows.len(), data, names, vec![true; p])
}

/// Fits a concept model on the train rows and records its validation AUC.
/// Column values are indexed by corpus position.
pub fn fit_cpm(
    concepts: Vec<Concept>,
    columns: &[&AnnotationColumn],
    labels: &[u8],
    weights: &[f64],
    rows: &RowSplit,
    l1: f64,
    split_seed: u64,
) -> Result<FittedCPM> {
    let names: Vec<String> = concepts.iter().map(|c| c.question.clone()).collect();
    let pick = |idx: &[usize]| -> (Vec<u8>, Vec<f64>) {
        (idx.iter().map(|&i| labels[i]).collect(), idx.iter().map(|&i| weights[i]).collect())
    };
    let x_train = train_design(columns, &rows.train, names.clone())?;
    let x_valid = train_design(columns, &rows.valid, names)?;
    let (y_train, w_train) = pick(&rows.train);
    let (y_valid, w_valid) = pick(&rows.valid);
    let penalty = PenaltySpec::lasso(l1);
    let fit = glm::fit(&x_train, &y_train, &w_train, penalty, FitOptions::default())?;
    if !fit.converged {
        tracing::warn!(kkt = fit.kkt_residual, "concept model fit did not converge");
    }
    let scores = glm::predict_proba(&fit, &x_valid)?;
    let auc = metrics::auc(&scores, &y_valid, &w_valid)?;
    Ok(FittedCPM {
        concepts,
        coefficients: fit.coefficients,
        intercept: fit.intercept,
        penalty,
        split_seed,
        validation_metric: auc,
    })
}

fn seed_metrics(
    corpus: &Corpus,
    model: &FittedCPM,
    annotations: &AnnotationMatrix,
    split: &DataSplit,
    config: &RoundConfig,
) -> Result<SeedMetrics> {
    let index = corpus.index();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    let mut groups = Vec::new();
    let mut predictions = Vec::new();
    for id in &split.valid_ids {
        let item = &corpus.items()[index[id.as_str()]];
        let row = annotations
            .row_of(id)
            .ok_or_else(|| CpmError::NotFound(format!("annotation row for {id}")))?;
        let probability = glm::sigmoid(model.linear_predictor(&annotations.values[row]));
        scores.push(probability);
        labels.push(item.label);
        weights.push(item.weight);
        groups.push(item.note.group.clone());
        predictions.push(Prediction {
            note_id: id.clone(),
            label: item.label,
            probability,
        });
    }
    let validation = metric_report(
        &scores,
        &labels,
        &weights,
        &groups,
        ReportOptions {
            n_boot: config.n_boot,
            seed: split.seed,
            target_sensitivity: config.target_sensitivity,
        },
    )?;
    let n = annotations.note_ids.len() as u64;
    let concepts = model
        .concepts
        .iter()
        .zip(&model.coefficients)
        .enumerate()
        .map(|(j, (c, &b))| {
            let column = annotations.column(j);
            let yes = column.values.iter().filter(|&&v| v == 1).count() as u64;
            let ci = prevalence_ci(yes, n, PREVALENCE_LEVEL)?;
            Ok(ConceptSummary {
                question: c.question.clone(),
                sign_prior: c.sign_prior,
                coefficient: b,
                sign_ok: c.sign_prior.agrees_with(b),
                prevalence: ci.point,
                ci_lower: ci.lower,
                ci_upper: ci.upper,
                annotation_failures: column.failures(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(SeedMetrics {
        validation,
        concepts,
        predictions,
    })
}

/// Runs one seed end to end on the prepared corpus.
pub fn run_seed(
    corpus: &Corpus,
    keyphrases: &KeyphraseTable,
    config: &RoundConfig,
    gateway: &Gateway,
    seed: u64,
) -> Result<CompletedSeed> {
    SeedSearch::initialize(corpus, keyphrases, config, gateway, seed)?.run()
}

/// Runs every configured seed in parallel and assembles the round record.
/// Failed seeds are recorded; the round fails only if all seeds fail.
pub fn run_round(corpus: &Corpus, config: &RoundConfig, gateway: &Gateway, meta: RunMeta) -> Result<RunRecord> {
    config.validate()?;
    if config.seeds.is_empty() {
        return Err(CpmError::InvalidArgument("no seeds configured".into()));
    }
    let prepared = prepare_corpus(corpus, config)?;
    for warning in &prepared.exclusions.warnings {
        tracing::warn!("{warning}");
    }
    let keyphrases = extract_keyphrases(&prepared.corpus, config, gateway)?;
    let (prepared, keyphrases) = (&prepared.corpus, &keyphrases);
    let outcomes: Vec<Result<CompletedSeed>> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || run_seed(prepared, keyphrases, config, gateway, seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect()
    });
    let mut per_seed = Vec::with_capacity(outcomes.len());
    let mut errors = Vec::new();
    for (&seed, outcome) in config.seeds.iter().zip(outcomes) {
        let outcome = match outcome {
            Ok(done) => SeedOutcome::Completed(Box::new(done)),
            Err(e) => {
                tracing::warn!(seed, error = %e, "seed failed");
                errors.push(format!("seed {seed}: {e}"));
                SeedOutcome::Failed { error: e.to_string() }
            }
        };
        per_seed.push(SeedRecord { seed, outcome });
    }
    if errors.len() == per_seed.len() {
        return Err(CpmError::AllSeedsFailed(errors.join("; ")));
    }
    let mut record = RunRecord {
        run_id: meta.run_id,
        round_index: meta.round_index,
        created_at: meta.created_at,
        backend: gateway.backend_identity().to_string(),
        config: config.clone(),
        per_seed,
        best_seed: None,
        stability: stability(&[]),
        penalty_note: PENALTY_NOTE.to_string(),
    };
    let completed: Vec<(u64, &CompletedSeed)> = record.completed().collect();
    let best_seed = completed
        .iter()
        .fold(None::<(u64, f64)>, |best, (seed, c)| {
            let auc = c.final_model.validation_metric;
            match best {
                Some((_, b)) if b >= auc => best,
                _ => Some((*seed, auc)),
            }
        })
        .map(|(s, _)| s);
    let sets: Vec<(u64, BTreeSet<String>)> = completed
        .iter()
        .map(|(seed, c)| (*seed, c.final_model.concepts.iter().map(|q| q.question.clone()).collect()))
        .collect();
    let stability = stability(&sets);
    record.best_seed = best_seed;
    record.stability = stability;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEvaluation {
    pub model: FittedCPM,
    pub report: MetricReport,
    pub annotations: AnnotationMatrix,
    pub split: DataSplit,
}

/// Annotates the given concepts and fits one concept model on the split of
/// `seed`, with no search.
pub fn evaluate_fixed_concepts(
    corpus: &Corpus,
    concepts: &[Concept],
    config: &RoundConfig,
    gateway: &Gateway,
    seed: u64,
) -> Result<FixedEvaluation> {
    if concepts.is_empty() {
        return Err(CpmError::InvalidArgument("no concepts to evaluate".into()));
    }
    config.validate()?;
    let prepared = prepare_corpus(corpus, config)?.corpus;
    let split = make_split(&prepared, config.split_fraction, seed)?;
    let template = config.prompts.template(PromptRole::Annotation)?;
    let notes: Vec<&Note> = prepared.items().iter().map(|i| &i.note).collect();
    let columns = concepts
        .iter()
        .map(|c| gateway.annotate(&notes, c, &template, config.concurrency_limit))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<u8> = prepared.items().iter().map(|i| i.label).collect();
    let weights: Vec<f64> = prepared.items().iter().map(|i| i.weight).collect();
    let rows = RowSplit::from_split(&split, &prepared.ids());
    let refs: Vec<&AnnotationColumn> = columns.iter().collect();
    let model = fit_cpm(concepts.to_vec(), &refs, &labels, &weights, &rows, config.cpm_l1, seed)?;
    let annotations = AnnotationMatrix::from_columns(prepared.ids(), concepts.to_vec(), &columns)?;
    let metrics = seed_metrics(&prepared, &model, &annotations, &split, config)?;
    Ok(FixedEvaluation {
        model,
        report: metrics.validation,
        annotations,
        split,
    })
}
