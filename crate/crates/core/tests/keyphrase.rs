use std::collections::BTreeMap;

use cpm_core::keyphrase::{build_vocab, rank_keyphrases};
use cpm_core::model::{make_split, Corpus, LabeledNote, Note};
use proptest::prelude::*;

fn corpus_and_phrases(rows: &[(u8, Vec<&str>)]) -> (Corpus, BTreeMap<String, Vec<String>>) {
    let mut items = Vec::new();
    let mut table = BTreeMap::new();
    for (i, (label, phrases)) in rows.iter().enumerate() {
        let id = format!("n{i:03}");
        items.push(LabeledNote::new(Note::new(id.clone(), "text"), *label));
        table.insert(id, phrases.iter().map(|p| p.to_string()).collect());
    }
    (Corpus::new(items, "test").unwrap(), table)
}

fn rows(n: usize, seed: u64) -> Vec<(u8, Vec<&'static str>)> {
    const NOISE: [&str; 4] = ["cough", "fever", "rash", "fatigue"];
    (0..n)
        .map(|i| {
            let label = u8::from(i % 3 == 0);
            let mut phrases = vec![NOISE[(i + seed as usize) % 4], NOISE[(i * 7 + 1) % 4]];
            if label == 1 {
                phrases.push("vomiting");
            }
            (label, phrases)
        })
        .collect()
}

#[test]
fn a_perfectly_separating_phrase_ranks_first() {
    let (corpus, table) = corpus_and_phrases(&rows(60, 0));
    let split = make_split(&corpus, 0.7, 1).unwrap();
    let lists: Vec<Vec<String>> = table.values().cloned().collect();
    let vocab = build_vocab(&lists, 3).unwrap();
    let ranking = rank_keyphrases(&vocab, &corpus, &table, &split, None, 5).unwrap();
    assert_eq!(ranking.ranked[0].phrase, "vomiting");
    assert!(ranking.ranked[0].coefficient > 0.0);
}

#[test]
fn validation_rows_are_never_read() {
    let (corpus, table) = corpus_and_phrases(&rows(60, 2));
    let split = make_split(&corpus, 0.7, 4).unwrap();
    let lists: Vec<Vec<String>> = table.values().cloned().collect();
    let vocab = build_vocab(&lists, 3).unwrap();
    let base = rank_keyphrases(&vocab, &corpus, &table, &split, None, 10).unwrap();

    // Scramble every validation note's label and phrases.
    let items = corpus
        .items()
        .iter()
        .map(|i| {
            let mut i = i.clone();
            if split.is_valid(i.id()) {
                i.label = 1 - i.label;
            }
            i
        })
        .collect();
    let scrambled = Corpus::new(items, "test").unwrap();
    let mut table2 = table.clone();
    for id in &split.valid_ids {
        table2.insert(id.clone(), vec!["rash".into(), "vomiting".into()]);
    }
    let again = rank_keyphrases(&vocab, &scrambled, &table2, &split, None, 10).unwrap();
    assert_eq!(base, again);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ranking_ignores_note_order(shift in 0usize..60) {
        let base_rows = rows(60, 1);
        let (corpus, table) = corpus_and_phrases(&base_rows);
        let split = make_split(&corpus, 0.7, 2).unwrap();
        let lists: Vec<Vec<String>> = table.values().cloned().collect();
        let vocab = build_vocab(&lists, 3).unwrap();
        let expected = rank_keyphrases(&vocab, &corpus, &table, &split, None, 10).unwrap();

        let mut items = corpus.items().to_vec();
        items.rotate_left(shift);
        items.reverse();
        let permuted = Corpus::new(items, "test").unwrap();
        let got = rank_keyphrases(&vocab, &permuted, &table, &split, None, 10).unwrap();
        prop_assert_eq!(expected, got);
    }
}
