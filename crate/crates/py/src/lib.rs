//! Python bindings. Structured values cross the boundary as JSON strings so
//! the Python side sees exactly what the Rust side persists.

use std::path::PathBuf;
use std::sync::Arc;

use chrono::Utc;
use cpm_core::corpus_io::{load_corpus, save_corpus, SCHEMA_VERSION};
use cpm_core::llm::{Gateway, OracleMock, OracleWorld, ResponseCache};
use cpm_core::synth::SynthSpec;
use cpm_core::{Concept, ConceptOrigin, CpmError, RoundConfig, RunMeta, SignPrior};
use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: CpmError) -> PyErr {
    match e {
        CpmError::NotFound(_) => PyFileNotFoundError::new_err(e.to_string()),
        CpmError::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            PyFileNotFoundError::new_err(e.to_string())
        }
        CpmError::InvalidArgument(_) | CpmError::InvalidCorpus(_) | CpmError::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn config_from(json: Option<&str>) -> PyResult<RoundConfig> {
    match json {
        Some(s) => serde_json::from_str(s).map_err(json_err),
        None => Ok(RoundConfig::default()),
    }
}

fn oracle_gateway(world: PathBuf, noise: f64, seed: u64) -> Result<Gateway, CpmError> {
    let backend = OracleMock::new(OracleWorld::load(&world)?, noise, seed)?;
    Ok(Gateway::new(Arc::new(backend), Arc::new(ResponseCache::in_memory())))
}

/// Writes corpus.jsonl and world.json for a planted synthetic task into
/// `out_dir` and returns the ground truth as JSON.
#[pyfunction]
#[pyo3(signature = (out_dir, n_notes=400, k=5, distractors=5, seed=0))]
fn synth(py: Python<'_>, out_dir: PathBuf, n_notes: usize, k: usize, distractors: usize, seed: u64) -> PyResult<String> {
    py.detach(|| {
        let spec = SynthSpec::planted(n_notes, k, distractors, seed)?;
        let synth = spec.generate()?;
        std::fs::create_dir_all(&out_dir).map_err(|e| CpmError::io(&out_dir, e))?;
        save_corpus(&synth.corpus, out_dir.join("corpus.jsonl"))?;
        synth.world.save(&out_dir.join("world.json"))?;
        Ok(serde_json::json!({
            "bayes_auc": synth.bayes_auc,
            "informative": synth.informative,
        })
        .to_string())
    })
    .map_err(to_py)
}

/// Runs one search round against the oracle backend and returns the run
/// record as JSON. Nothing is persisted.
#[pyfunction]
#[pyo3(signature = (corpus, world, config=None, noise=0.0, oracle_seed=0, run_id="py".to_string()))]
fn run_round(
    py: Python<'_>,
    corpus: PathBuf,
    world: PathBuf,
    config: Option<&str>,
    noise: f64,
    oracle_seed: u64,
    run_id: String,
) -> PyResult<String> {
    let config = config_from(config)?;
    py.detach(|| {
        let corpus = load_corpus(&corpus, SCHEMA_VERSION)?;
        let gateway = oracle_gateway(world, noise, oracle_seed)?;
        let meta = RunMeta {
            run_id,
            round_index: 1,
            created_at: Utc::now(),
        };
        let record = cpm_core::run_round(&corpus, &config, &gateway, meta)?;
        Ok(serde_json::to_string(&record)?)
    })
    .map_err(to_py)
}

/// Fits and evaluates a fixed list of questions; returns the metric report
/// as JSON.
#[pyfunction]
#[pyo3(signature = (corpus, world, questions, config=None, seed=0))]
fn evaluate_fixed(
    py: Python<'_>,
    corpus: PathBuf,
    world: PathBuf,
    questions: Vec<String>,
    config: Option<&str>,
    seed: u64,
) -> PyResult<String> {
    let config = config_from(config)?;
    py.detach(|| {
        let corpus = load_corpus(&corpus, SCHEMA_VERSION)?;
        let concepts = questions
            .into_iter()
            .map(|q| Concept::new(q, SignPrior::Unknown, ConceptOrigin::UserSupplied))
            .collect::<Result<Vec<_>, _>>()?;
        let gateway = oracle_gateway(world, 0.0, 0)?;
        let eval = cpm_core::evaluate_fixed_concepts(&corpus, &concepts, &config, &gateway, seed)?;
        Ok(serde_json::json!({ "model": eval.model, "report": eval.report }).to_string())
    })
    .map_err(to_py)
}

/// Weighted AUC; unit weights when `weights` is omitted.
#[pyfunction]
#[pyo3(signature = (scores, labels, weights=None))]
fn auc(scores: Vec<f64>, labels: Vec<u8>, weights: Option<Vec<f64>>) -> PyResult<f64> {
    let weights = weights.unwrap_or_else(|| vec![1.0; scores.len()]);
    cpm_core::metrics::auc(&scores, &labels, &weights).map_err(to_py)
}

#[pymodule]
fn cpm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run_round, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_fixed, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    Ok(())
}
