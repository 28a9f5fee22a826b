//! What a run learns from: the corpus file and the language-model backend.
//! Written once when a run is created and read whenever a round starts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use cpm_core::corpus_io::{load_corpus, SCHEMA_VERSION};
use cpm_core::llm::{BackendSpec, Gateway, ResponseCache};
use cpm_core::rounds::run_dir;
use cpm_core::{Corpus, CpmError};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

pub const MANIFEST_FILE: &str = "run.json";
pub const CACHE_FILE: &str = "llm_cache.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub corpus: PathBuf,
    pub backend: BackendSpec,
    /// Response cache log; defaults to one file per run.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    pub created_at: DateTime<Utc>,
}

impl RunManifest {
    pub fn path(root: &Path, run_id: &str) -> ServiceResult<PathBuf> {
        Ok(run_dir(root, run_id)?.join(MANIFEST_FILE))
    }

    pub fn load(root: &Path, run_id: &str) -> ServiceResult<Self> {
        let path = Self::path(root, run_id)?;
        let body = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ServiceError::Core(CpmError::NotFound(format!("run {run_id}"))),
            _ => ServiceError::Io(e),
        })?;
        Ok(serde_json::from_str(&body).map_err(CpmError::from)?)
    }

    /// Writes the manifest of a new run; an existing run is a conflict.
    pub fn create(&self, root: &Path) -> ServiceResult<()> {
        let path = Self::path(root, &self.run_id)?;
        if path.exists() {
            return Err(ServiceError::Conflict(format!("run {} already exists", self.run_id)));
        }
        std::fs::create_dir_all(path.parent().expect("run directory"))?;
        let mut body = serde_json::to_string_pretty(self).map_err(CpmError::from)?;
        body.push('\n');
        std::fs::write(&path, body)?;
        Ok(())
    }

    pub fn corpus(&self) -> ServiceResult<Corpus> {
        Ok(load_corpus(&self.corpus, SCHEMA_VERSION)?)
    }

    pub fn gateway(&self, root: &Path) -> ServiceResult<Gateway> {
        let cache_path = match &self.cache {
            Some(p) => p.clone(),
            None => run_dir(root, &self.run_id)?.join(CACHE_FILE),
        };
        let cache = ResponseCache::open(cache_path)?;
        Ok(Gateway::new(self.backend.build()?, Arc::new(cache)))
    }
}

/// Runs the configured round `round_index` of a run and persists it.
pub fn execute_round(root: &Path, run_id: &str, round_index: u32, created_at: DateTime<Utc>) -> ServiceResult<PathBuf> {
    let manifest = RunManifest::load(root, run_id)?;
    let config = cpm_core::rounds::Lineage::open(root, run_id)?.config(round_index)?;
    let corpus = manifest.corpus()?;
    let gateway = manifest.gateway(root)?;
    let meta = cpm_core::RunMeta {
        run_id: run_id.to_string(),
        round_index,
        created_at,
    };
    tracing::info!(run_id, round_index, notes = corpus.len(), "starting round");
    let record = cpm_core::run_round(&corpus, &config, &gateway, meta)?;
    let stats = gateway.cache_stats();
    tracing::info!(hits = stats.hits, misses = stats.misses, "round finished");
    Ok(cpm_core::rounds::persist_round(root, &record)?)
}
