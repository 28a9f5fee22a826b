//! Corpus ingestion, declarative filtering and AKI outcome labeling.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{CpmError, Result};
use crate::metrics::{kdigo_label, CreatininePanel};
use crate::model::{Corpus, LabeledNote, Note};

pub const SCHEMA_VERSION: u32 = 1;

/// Reads a JSON Lines corpus. Every bad line is reported, not just the first.
pub fn load_corpus(path: impl AsRef<Path>, schema_version: u32) -> Result<Corpus> {
    let path = path.as_ref();
    if schema_version != SCHEMA_VERSION {
        return Err(CpmError::InvalidArgument(format!(
            "unsupported corpus schema version {schema_version}"
        )));
    }
    let file = File::open(path).map_err(|e| CpmError::io(path, e))?;
    let mut items = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| CpmError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LabeledNote>(&line) {
            Ok(item) => {
                if let Err(e) = item.validate() {
                    errors.push(format!("line {line_no}: {e}"));
                } else if !seen.insert(item.id().to_string()) {
                    errors.push(format!("line {line_no}: duplicate note_id `{}`", item.id()));
                } else {
                    items.push(item);
                }
            }
            Err(e) => errors.push(format!("line {line_no}: {e}")),
        }
    }
    if !errors.is_empty() {
        return Err(CpmError::CorpusSchema(errors));
    }
    Corpus::new(items, path.display().to_string())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CpmError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in corpus.items() {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| CpmError::io(path, e))?;
    }
    out.flush().map_err(|e| CpmError::io(path, e))
}

/// A retention condition; notes failing it are excluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    /// Keep notes written strictly before `reference`. Notes without a
    /// timestamp are kept and reported.
    TimestampBefore { reference: DateTime<Utc> },
    /// Keep notes whose text does not match `pattern`.
    TextNotMatching { pattern: String },
    GroupIn { groups: BTreeSet<String> },
    IdNotIn { ids: BTreeSet<String> },
}

enum Compiled<'a> {
    Before(DateTime<Utc>),
    NotMatching(Regex),
    GroupIn(&'a BTreeSet<String>),
    IdNotIn(&'a BTreeSet<String>),
}

impl Predicate {
    fn compile(&self) -> Result<Compiled<'_>> {
        Ok(match self {
            Predicate::TimestampBefore { reference } => Compiled::Before(*reference),
            Predicate::TextNotMatching { pattern } => {
                Compiled::NotMatching(Regex::new(pattern).map_err(|e| CpmError::InvalidRegex {
                    pattern: pattern.clone(),
                    message: e.to_string(),
                })?)
            }
            Predicate::GroupIn { groups } => Compiled::GroupIn(groups),
            Predicate::IdNotIn { ids } => Compiled::IdNotIn(ids),
        })
    }
}

impl Compiled<'_> {
    /// `None` when the note lacks the field the predicate reads.
    fn keeps(&self, note: &Note) -> Option<bool> {
        match self {
            Compiled::Before(reference) => note.timestamp.map(|t| t < *reference),
            Compiled::NotMatching(re) => Some(!re.is_match(&note.text)),
            Compiled::GroupIn(groups) => Some(note.group.as_ref().is_some_and(|g| groups.contains(g))),
            Compiled::IdNotIn(ids) => Some(!ids.contains(&note.note_id)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub note_id: String,
    pub predicate_index: usize,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub retained: usize,
    pub excluded: Vec<Exclusion>,
    pub warnings: Vec<String>,
}

/// Applies predicates in order; each excluded note is attributed to the
/// first predicate it fails. The input corpus is left untouched.
pub fn filter_corpus(corpus: &Corpus, predicates: &[Predicate]) -> Result<(Corpus, ExclusionReport)> {
    let compiled: Vec<Compiled<'_>> = predicates.iter().map(Predicate::compile).collect::<Result<_>>()?;
    let mut report = ExclusionReport::default();
    let mut missing = vec![0usize; predicates.len()];
    let mut kept = Vec::new();
    'items: for item in corpus.items() {
        for (i, p) in compiled.iter().enumerate() {
            match p.keeps(&item.note) {
                Some(true) => {}
                Some(false) => {
                    report.excluded.push(Exclusion {
                        note_id: item.id().to_string(),
                        predicate_index: i,
                        predicate: predicates[i].clone(),
                    });
                    continue 'items;
                }
                None => missing[i] += 1,
            }
        }
        kept.push(item.clone());
    }
    for (i, count) in missing.into_iter().enumerate() {
        if count > 0 {
            report.warnings.push(format!(
                "predicate {i}: {count} note(s) lack the field it reads and were retained"
            ));
        }
    }
    report.retained = kept.len();
    let filtered = Corpus::new(kept, corpus.provenance())?;
    Ok((filtered, report))
}

/// A note with its perioperative creatinine values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AkiRow {
    pub note: Note,
    pub panel: CreatininePanel,
}

pub fn label_aki(rows: Vec<AkiRow>, provenance: impl Into<String>) -> Result<Corpus> {
    let items = rows
        .into_iter()
        .map(|row| {
            row.panel.validate().map_err(|e| {
                CpmError::InvalidPanel(format!("note {}: {e}", row.note.note_id))
            })?;
            Ok(LabeledNote::new(row.note, kdigo_label(&row.panel)))
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(items, provenance)
}

#[derive(Deserialize)]
struct CreatinineCsvRow {
    note_id: String,
    #[serde(default)]
    encounter_id: Option<String>,
    #[serde(default)]
    note_type: Option<String>,
    #[serde(default)]
    timestamp: Option<DateTime<Utc>>,
    #[serde(default)]
    group: Option<String>,
    text: String,
    last_preop_scr: String,
    max_postop_48h_scr: String,
    max_postop_7d_scr: String,
}

/// Reads rows with columns `note_id, text, last_preop_scr,
/// max_postop_48h_scr, max_postop_7d_scr` and optionally `encounter_id,
/// note_type, timestamp, group`.
pub fn read_creatinine_csv(path: impl AsRef<Path>) -> Result<Vec<AkiRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (n, record) in reader.deserialize::<CreatinineCsvRow>().enumerate() {
        let r = record?;
        let panel = CreatininePanel::parse(&r.last_preop_scr, &r.max_postop_48h_scr, &r.max_postop_7d_scr)
            .map_err(|e| CpmError::InvalidPanel(format!("row {}: {e}", n + 1)))?;
        let note = Note {
            encounter_id: r.encounter_id.filter(|s| !s.is_empty()).unwrap_or_else(|| r.note_id.clone()),
            note_id: r.note_id,
            text: r.text,
            note_type: r.note_type.filter(|s| !s.is_empty()).unwrap_or_else(|| "preop".to_string()),
            timestamp: r.timestamp,
            group: r.group.filter(|s| !s.is_empty()),
        };
        rows.push(AkiRow { note, panel });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn loads_valid_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "c.jsonl",
            concat!(
                r#"{"note":{"note_id":"a","encounter_id":"e1","text":"fell","note_type":"ed"},"label":1}"#,
                "\n",
                r#"{"note":{"note_id":"b","encounter_id":"e2","text":"cough","note_type":"ed","group":"A"},"label":0,"weight":2.0}"#,
                "\n"
            ),
        );
        let corpus = load_corpus(&path, 1).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.items()[0].weight, 1.0);
        assert_eq!(corpus.items()[1].note.group.as_deref(), Some("A"));
    }

    #[test]
    fn reports_missing_label_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "c.jsonl",
            concat!(
                r#"{"note":{"note_id":"a","encounter_id":"e1","text":"fell","note_type":"ed"}}"#,
                "\n",
                r#"{"note":{"note_id":"b","encounter_id":"e2","text":"x","note_type":"ed"},"label":0}"#,
                "\n",
                r#"{"note":{"note_id":"b","encounter_id":"e2","text":"x","note_type":"ed"},"label":0}"#,
                "\n",
            ),
        );
        match load_corpus(&path, 1) {
            Err(CpmError::CorpusSchema(errors)) => {
                assert_eq!(errors.len(), 2);
                assert!(errors[0].starts_with("line 1:"), "{errors:?}");
                assert!(errors[0].contains("label"));
                assert!(errors[1].starts_with("line 3:") && errors[1].contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(load_corpus(&path, 2).is_err());
    }

    #[test]
    fn save_then_load_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let items = vec![
            LabeledNote::new(
                Note::new("a", "fell").with_timestamp(Utc.with_ymd_and_hms(2024, 1, 2, 3, 4, 5).unwrap()),
                1,
            ),
            LabeledNote::new(Note::new("b", "cough").with_group("B"), 0),
        ];
        let corpus = Corpus::new(items, "t").unwrap();
        let p1 = dir.path().join("1.jsonl");
        let p2 = dir.path().join("2.jsonl");
        save_corpus(&corpus, &p1).unwrap();
        let loaded = load_corpus(&p1, 1).unwrap();
        save_corpus(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded.items(), corpus.items());
    }

    fn three() -> Corpus {
        Corpus::new(
            vec![
                LabeledNote::new(Note::new("a", "CT head negative").with_group("A"), 1),
                LabeledNote::new(Note::new("b", "fell at home").with_group("A"), 0),
                LabeledNote::new(Note::new("c", "vomiting twice").with_group("B"), 1),
                LabeledNote::new(Note::new("d", "headache").with_group("B"), 0),
            ],
            "t",
        )
        .unwrap()
    }

    #[test]
    fn regex_filter_names_predicate() {
        let corpus = three();
        let pred = Predicate::TextNotMatching {
            pattern: "CT (head|results)".into(),
        };
        let (kept, report) = filter_corpus(&corpus, std::slice::from_ref(&pred)).unwrap();
        assert_eq!(kept.len(), 3);
        assert_eq!(report.excluded.len(), 1);
        assert_eq!(report.excluded[0].note_id, "a");
        assert_eq!(report.excluded[0].predicate, pred);
        assert_eq!(corpus.len(), 4);
    }

    #[test]
    fn empty_predicates_are_identity() {
        let corpus = three();
        let (kept, report) = filter_corpus(&corpus, &[]).unwrap();
        assert_eq!(kept, corpus);
        assert!(report.excluded.is_empty());
    }

    #[test]
    fn missing_timestamps_are_kept_with_warning() {
        let corpus = three();
        let pred = Predicate::TimestampBefore {
            reference: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
        };
        let (kept, report) = filter_corpus(&corpus, &[pred]).unwrap();
        assert_eq!(kept.len(), 4);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn invalid_regex_is_an_error() {
        let pred = Predicate::TextNotMatching { pattern: "(".into() };
        assert!(matches!(
            filter_corpus(&three(), &[pred]),
            Err(CpmError::InvalidRegex { .. })
        ));
    }

    #[test]
    fn filters_compose() {
        let corpus = three();
        let p1 = vec![Predicate::IdNotIn {
            ids: BTreeSet::from(["b".to_string()]),
        }];
        let p2 = vec![Predicate::TextNotMatching {
            pattern: "^zzz".into(),
        }];
        let all: Vec<Predicate> = p1.iter().chain(&p2).cloned().collect();
        let (once, _) = filter_corpus(&corpus, &all).unwrap();
        let (first, _) = filter_corpus(&corpus, &p1).unwrap();
        let (twice, _) = filter_corpus(&first, &p2).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn labels_aki_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "scr.csv",
            "note_id,text,last_preop_scr,max_postop_48h_scr,max_postop_7d_scr,group\n\
             p1,\"preop note, one\",1.0,1.3,1.3,A\n\
             p2,preop note two,1.0,1.0,1.0,\n\
             p3,preop note three,0.8,1.0,1.2,B\n",
        );
        let rows = read_creatinine_csv(&path).unwrap();
        assert_eq!(rows[0].note.text, "preop note, one");
        assert_eq!(rows[1].note.group, None);
        let corpus = label_aki(rows, "scr").unwrap();
        let labels: Vec<u8> = corpus.items().iter().map(|i| i.label).collect();
        assert_eq!(labels, vec![1, 0, 1]);
    }
}
