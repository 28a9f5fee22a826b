//! Bag-of-keyphrases association ranking.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{CpmError, Result};
use crate::glm::{self, DesignMatrix, FitOptions, PenaltyKind, RowSplit};
use crate::model::{make_split, AnnotationMatrix, Corpus, DataSplit, LabeledNote};

pub const RANKING_TOL: f64 = 1e-6;
pub const RANKING_MAX_ITER: usize = 2_000;
/// Offset mixed into the outer split seed for the nested ridge split.
const NESTED_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const NESTED_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyphraseVocabulary {
    pub phrases: Vec<String>,
    pub doc_frequency: Vec<usize>,
    pub min_df: usize,
}

impl KeyphraseVocabulary {
    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

/// Vocabulary of phrases appearing in at least `min_df` notes, ordered by
/// descending document frequency, then lexicographically.
pub fn build_vocab<S: AsRef<str>>(keyphrases_per_note: &[Vec<S>], min_df: usize) -> Result<KeyphraseVocabulary> {
    if min_df == 0 {
        return Err(CpmError::InvalidArgument("min_df must be at least 1".into()));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for note in keyphrases_per_note {
        let unique: BTreeSet<&str> = note.iter().map(AsRef::as_ref).collect();
        for phrase in unique {
            *df.entry(phrase).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = df.into_iter().filter(|(_, n)| *n >= min_df).collect();
    if kept.is_empty() {
        return Err(CpmError::EmptyVocabulary { min_df });
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Ok(KeyphraseVocabulary {
        phrases: kept.iter().map(|(p, _)| p.to_string()).collect(),
        doc_frequency: kept.iter().map(|(_, n)| *n).collect(),
        min_df,
    })
}

/// Per-note keyphrase lookup.
pub trait KeyphraseSource {
    fn phrases(&self, note_id: &str) -> Option<&[String]>;
}

impl KeyphraseSource for BTreeMap<String, Vec<String>> {
    fn phrases(&self, note_id: &str) -> Option<&[String]> {
        self.get(note_id).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedKeyphrase {
    pub phrase: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyphraseRanking {
    pub ranked: Vec<RankedKeyphrase>,
    pub ridge_strength: f64,
    /// Validation AUC of the chosen strength on the nested split, when one
    /// could be made.
    pub nested_auc: Option<f64>,
}

/// Ranks vocabulary phrases by the magnitude of their ridge coefficient in
/// a weighted logistic model fitted on the training side only. Columns of
/// `fixed` enter unpenalized so the ranking is adjusted for them.
pub fn rank_keyphrases(
    vocab: &KeyphraseVocabulary,
    corpus: &Corpus,
    source: &dyn KeyphraseSource,
    split: &DataSplit,
    fixed: Option<&AnnotationMatrix>,
    top_n: usize,
) -> Result<KeyphraseRanking> {
    let index = corpus.index();
    let train: Vec<&LabeledNote> = split
        .train_ids
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .map(|&i| &corpus.items()[i])
                .ok_or_else(|| CpmError::InvalidArgument(format!("split note {id} not in corpus")))
        })
        .collect::<Result<_>>()?;
    let n = train.len();

    let mut columns = Vec::new();
    let mut names = Vec::new();
    let mut penalized = Vec::new();
    if let Some(fixed) = fixed {
        let rows: Vec<usize> = train
            .iter()
            .map(|item| {
                fixed.row_of(item.id()).ok_or_else(|| {
                    CpmError::DimensionMismatch(format!("no fixed-concept row for {}", item.id()))
                })
            })
            .collect::<Result<_>>()?;
        for (j, concept) in fixed.concepts.iter().enumerate() {
            columns.push(rows.iter().map(|&r| f64::from(fixed.values[r][j])).collect());
            names.push(concept.question.clone());
            penalized.push(false);
        }
    }
    let n_fixed = columns.len();
    let phrase_pos: BTreeMap<&str, usize> = vocab
        .phrases
        .iter()
        .enumerate()
        .map(|(j, p)| (p.as_str(), j))
        .collect();
    let mut indicators: Vec<Vec<f64>> = vec![vec![0.0; n]; vocab.len()];
    for (row, item) in train.iter().enumerate() {
        let phrases = source.phrases(item.id()).ok_or_else(|| {
            CpmError::InvalidArgument(format!("no keyphrases recorded for note {}", item.id()))
        })?;
        for p in phrases {
            if let Some(&j) = phrase_pos.get(p.as_str()) {
                indicators[j][row] = 1.0;
            }
        }
    }
    // A phrase column identical to a fixed column has an adjusted ridge
    // coefficient of exactly zero (the loss only sees their sum), so it is
    // left out of the fit.
    let kept: Vec<usize> = (0..vocab.len())
        .filter(|&j| !columns[..n_fixed].iter().any(|c| *c == indicators[j]))
        .collect();
    for &j in &kept {
        columns.push(std::mem::take(&mut indicators[j]));
        names.push(vocab.phrases[j].clone());
        penalized.push(true);
    }

    let x = DesignMatrix::from_columns(n, columns, names, penalized)?;
    let y: Vec<u8> = train.iter().map(|i| i.label).collect();
    let w: Vec<f64> = train.iter().map(|i| i.weight).collect();
    let options = FitOptions {
        tol: RANKING_TOL,
        max_iter: RANKING_MAX_ITER,
        warm_start: None,
    };

    let (strength, nested_auc) = match nested_split(&train, split.seed) {
        Some(rows) => {
            let sel = glm::select_penalty(&x, &y, &w, PenaltyKind::Ridge, &rows, options)?;
            (sel.penalty.l2, Some(sel.validation_auc))
        }
        None => {
            let lmax = glm::lambda_max(&x, &y, &w, PenaltyKind::Ridge)?;
            (lmax * glm::PENALTY_GRID_RATIO.sqrt(), None)
        }
    };
    let fit = glm::fit(&x, &y, &w, PenaltyKind::Ridge.spec(strength), options)?;

    let mut ranked: Vec<RankedKeyphrase> = kept
        .iter()
        .zip(&fit.coefficients[n_fixed..])
        .filter(|(_, &b)| b != 0.0)
        .map(|(&j, &b)| RankedKeyphrase {
            phrase: vocab.phrases[j].clone(),
            coefficient: b,
        })
        .collect();
    ranked.sort_by(|a, b| b.coefficient.abs().total_cmp(&a.coefficient.abs()));
    ranked.truncate(top_n);
    Ok(KeyphraseRanking {
        ranked,
        ridge_strength: strength,
        nested_auc,
    })
}

/// Splits the training rows again for choosing the ridge strength, or
/// `None` when the training side is too small to split by class.
fn nested_split(train: &[&LabeledNote], seed: u64) -> Option<RowSplit> {
    let items: Vec<LabeledNote> = train.iter().map(|&i| i.clone()).collect();
    let sub = Corpus::new(items, "nested").ok()?;
    let inner = make_split(&sub, NESTED_FRACTION, seed ^ NESTED_SEED_SALT).ok()?;
    let ids: Vec<String> = train.iter().map(|i| i.id().to_string()).collect();
    Some(RowSplit::from_split(&inner, &ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Concept, ConceptOrigin, Note, SignPrior};
    use std::cell::RefCell;

    #[test]
    fn vocab_examples() {
        let notes = vec![vec!["a", "b"], vec!["a"]];
        assert_eq!(build_vocab(&notes, 2).unwrap().phrases, vec!["a"]);
        assert_eq!(build_vocab(&notes, 1).unwrap().phrases, vec!["a", "b"]);
        let ties = vec![vec!["zeta", "alpha", "mid"]];
        assert_eq!(build_vocab(&ties, 1).unwrap().phrases, vec!["alpha", "mid", "zeta"]);
        assert!(matches!(build_vocab(&notes, 3), Err(CpmError::EmptyVocabulary { min_df: 3 })));
        let repeated = vec![vec!["a", "a"], vec!["b"]];
        assert_eq!(build_vocab(&repeated, 1).unwrap().doc_frequency, vec![1, 1]);
    }

    struct Audited<'a> {
        inner: &'a BTreeMap<String, Vec<String>>,
        seen: RefCell<BTreeSet<String>>,
    }

    impl KeyphraseSource for Audited<'_> {
        fn phrases(&self, note_id: &str) -> Option<&[String]> {
            self.seen.borrow_mut().insert(note_id.to_string());
            self.inner.phrases(note_id)
        }
    }

    fn fixture(n: usize) -> (Corpus, BTreeMap<String, Vec<String>>) {
        let mut items = Vec::new();
        let mut phrases = BTreeMap::new();
        for i in 0..n {
            let label = (i % 2) as u8;
            let id = format!("n{i:03}");
            let mut p = vec![];
            if label == 1 {
                p.push("signal".to_string());
            }
            if (i / 2) % 2 == 0 {
                p.push("noise a".to_string());
            }
            if (i / 4) % 2 == 0 {
                p.push("noise b".to_string());
            }
            items.push(LabeledNote::new(Note::new(id.clone(), "t"), label));
            phrases.insert(id, p);
        }
        (Corpus::new(items, "t").unwrap(), phrases)
    }

    #[test]
    fn separating_phrase_ranks_first_and_validation_is_untouched() {
        let (corpus, phrases) = fixture(60);
        let split = make_split(&corpus, 0.7, 1).unwrap();
        let train_phrases: Vec<Vec<String>> =
            split.train_ids.iter().map(|id| phrases[id].clone()).collect();
        let vocab = build_vocab(&train_phrases, 3).unwrap();
        let audited = Audited {
            inner: &phrases,
            seen: RefCell::new(BTreeSet::new()),
        };
        let ranking = rank_keyphrases(&vocab, &corpus, &audited, &split, None, 10).unwrap();
        assert_eq!(ranking.ranked[0].phrase, "signal");
        assert!(ranking.ranked[0].coefficient > 0.0);
        let seen = audited.seen.borrow();
        assert!(split.valid_ids.iter().all(|id| !seen.contains(id)));
        assert_eq!(seen.len(), split.train_ids.len());
    }

    #[test]
    fn ranking_ignores_note_order() {
        let (corpus, phrases) = fixture(48);
        let split = make_split(&corpus, 0.7, 4).unwrap();
        let vocab = build_vocab(&phrases.values().cloned().collect::<Vec<_>>(), 1).unwrap();
        let mut items = corpus.items().to_vec();
        items.reverse();
        let reversed = Corpus::new(items, "r").unwrap();
        let a = rank_keyphrases(&vocab, &corpus, &phrases, &split, None, 5).unwrap();
        let b = rank_keyphrases(&vocab, &reversed, &phrases, &split, None, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_concept_absorbs_identical_phrase() {
        // "signal" is a noisy predictor; the fixed concept column equals it.
        let mut items = Vec::new();
        let mut phrases = BTreeMap::new();
        let mut values = Vec::new();
        for i in 0..120 {
            let s = (i % 3 != 0) as u8;
            let label = if i % 5 == 0 { 1 - s } else { s };
            let id = format!("n{i:03}");
            let mut p = vec![];
            if s == 1 {
                p.push("signal".to_string());
            }
            if i % 7 < 3 {
                p.push("other".to_string());
            }
            items.push(LabeledNote::new(Note::new(id.clone(), "t"), label));
            phrases.insert(id, p);
            values.push(vec![s]);
        }
        let corpus = Corpus::new(items, "t").unwrap();
        let split = make_split(&corpus, 0.7, 2).unwrap();
        let vocab = build_vocab(&phrases.values().cloned().collect::<Vec<_>>(), 1).unwrap();
        let concept = Concept::new("Signal?", SignPrior::Risk, ConceptOrigin::Proposal).unwrap();
        let fixed = AnnotationMatrix {
            note_ids: corpus.ids(),
            concepts: vec![concept],
            failure_mask: vec![vec![false]; values.len()],
            values,
        };
        let coef = |r: &KeyphraseRanking| {
            r.ranked
                .iter()
                .find(|k| k.phrase == "signal")
                .map_or(0.0, |k| k.coefficient)
        };
        let plain = rank_keyphrases(&vocab, &corpus, &phrases, &split, None, 10).unwrap();
        let adjusted = rank_keyphrases(&vocab, &corpus, &phrases, &split, Some(&fixed), 10).unwrap();
        let (u, a) = (coef(&plain), coef(&adjusted));
        assert!(u > 0.0);
        assert!(a.abs() < 0.1 * u, "adjusted {a} vs unadjusted {u}");
    }
}
