use std::collections::BTreeSet;

use chrono::{TimeZone, Utc};
use cpm_core::corpus_io::{filter_corpus, load_corpus, save_corpus, Predicate, SCHEMA_VERSION};
use cpm_core::model::{Corpus, LabeledNote, Note};
use proptest::prelude::*;

fn corpus() -> Corpus {
    let items = (0..40)
        .map(|i| {
            let mut note = Note::new(format!("n{i:02}"), format!("note {i} {}", if i % 3 == 0 { "transfer" } else { "direct" }))
                .with_group(if i % 2 == 0 { "east" } else { "west" });
            if i % 5 != 0 {
                note = note.with_timestamp(Utc.with_ymd_and_hms(2020, 1 + (i % 12) as u32, 1, 0, 0, 0).unwrap());
            }
            LabeledNote::new(note, u8::from(i % 4 == 0))
        })
        .collect();
    Corpus::new(items, "fixture").unwrap()
}

fn predicate() -> impl Strategy<Value = Predicate> {
    prop_oneof![
        (1u32..12).prop_map(|m| Predicate::TimestampBefore {
            reference: Utc.with_ymd_and_hms(2020, m, 15, 0, 0, 0).unwrap(),
        }),
        Just(Predicate::TextNotMatching { pattern: "transfer".into() }),
        Just(Predicate::GroupIn {
            groups: BTreeSet::from(["east".to_string()]),
        }),
        prop::collection::btree_set(0usize..40, 0..6).prop_map(|ids| Predicate::IdNotIn {
            ids: ids.into_iter().map(|i| format!("n{i:02}")).collect(),
        }),
    ]
}

proptest! {
    #[test]
    fn filtering_composes(p1 in prop::collection::vec(predicate(), 0..3), p2 in prop::collection::vec(predicate(), 0..3)) {
        let c = corpus();
        let all: Vec<Predicate> = p1.iter().chain(&p2).cloned().collect();
        let (once, _) = filter_corpus(&c, &all).unwrap();
        let (first, _) = filter_corpus(&c, &p1).unwrap();
        let (twice, _) = filter_corpus(&first, &p2).unwrap();
        prop_assert_eq!(once.ids(), twice.ids());
    }
}

#[test]
fn save_then_load_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    save_corpus(&corpus(), &a).unwrap();
    let loaded = load_corpus(&a, SCHEMA_VERSION).unwrap();
    save_corpus(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(loaded.ids(), corpus().ids());
}

#[test]
fn exclusions_name_their_predicate() {
    let (kept, report) = filter_corpus(
        &corpus(),
        &[
            Predicate::GroupIn {
                groups: BTreeSet::from(["east".to_string()]),
            },
            Predicate::TextNotMatching { pattern: "transfer".into() },
        ],
    )
    .unwrap();
    assert_eq!(kept.len() + report.excluded.len(), 40);
    assert!(report.excluded.iter().any(|e| e.predicate_index == 1));
    assert!(report.excluded.iter().all(|e| e.predicate_index <= 1));
}
