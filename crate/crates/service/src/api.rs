//! HTTP API consumed by the review console.

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use cpm_core::model::{CompletedSeed, SeedOutcome};
use cpm_core::rounds::{list_runs, load_annotation_lines, load_round, round_dir, ConfigDiff, FeedbackAction, Lineage};
use cpm_core::{CpmError, RunRecord};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ServiceError;
use crate::manifest::{execute_round, RunManifest};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RoundState {
    /// Configured but never started.
    Pending,
    Running { started_at: DateTime<Utc> },
    Completed,
    Failed { error: String, finished_at: DateTime<Utc> },
}

#[derive(Clone)]
pub struct AppState {
    root: Arc<PathBuf>,
    /// Rounds started by this process, keyed by run id. One entry per run
    /// enforces the one-round-at-a-time rule.
    jobs: Arc<Mutex<HashMap<String, (u32, RoundState)>>>,
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        AppState {
            root: Arc::new(root.into()),
            jobs: Arc::default(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn job(&self, run_id: &str) -> Option<(u32, RoundState)> {
        self.jobs.lock().expect("job table poisoned").get(run_id).cloned()
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::Core(core) => match core {
                CpmError::NotFound(_) => StatusCode::NOT_FOUND,
                CpmError::PathCollision(_) => StatusCode::CONFLICT,
                CpmError::InvalidFeedback(_)
                | CpmError::InvalidArgument(_)
                | CpmError::MissingPlaceholder { .. }
                | CpmError::UnknownGroup(_) => StatusCode::UNPROCESSABLE_ENTITY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Usage(_) => StatusCode::BAD_REQUEST,
            ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<CpmError> for ApiError {
    fn from(e: CpmError) -> Self {
        ServiceError::Core(e).into()
    }
}

type ApiResult<T = Json<Value>> = Result<T, ApiError>;

#[derive(Debug, Default, Deserialize)]
pub struct SeedQuery {
    pub seed: Option<u64>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/runs", get(runs))
        .route("/runs/{id}/feedback", post(feedback))
        .route("/runs/{id}/rounds/{n}/start", post(start))
        .route("/runs/{id}/rounds/{n}/status", get(status))
        .route("/runs/{id}/rounds/{n}/config", get(config))
        .route("/runs/{id}/rounds/{n}/concepts", get(concepts))
        .route("/runs/{id}/rounds/{n}/metrics", get(metrics))
        .route("/runs/{id}/rounds/{n}/annotations", get(annotations))
        .route("/runs/{id}/rounds/{n}/mispredictions", get(mispredictions))
        .route("/runs/{id}/rounds/{n}/trace", get(trace))
        .with_state(state)
}

pub async fn serve(root: PathBuf, addr: SocketAddr) -> std::io::Result<()> {
    if !root.is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("run root {} does not exist", root.display()),
        ));
    }
    if !addr.ip().is_loopback() {
        tracing::warn!(%addr, "binding a non-loopback address; notes will be reachable from the network");
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, root = %root.display(), "serving");
    axum::serve(listener, router(AppState::new(root))).await
}

fn run_exists(state: &AppState, run_id: &str) -> ApiResult<()> {
    let dir = cpm_core::rounds::run_dir(state.root(), run_id)?;
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CpmError::NotFound(format!("run {run_id}")).into())
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn runs(State(state): State<AppState>) -> ApiResult {
    blocking(move || Ok(Json(serde_json::to_value(list_runs(state.root())?).map_err(CpmError::from)?))).await
}

async fn load(state: &AppState, run_id: String, round: u32) -> ApiResult<RunRecord> {
    let root = state.root.clone();
    blocking(move || Ok(load_round(&root, &run_id, round)?)).await
}

fn pick_seed(record: &RunRecord, seed: Option<u64>) -> ApiResult<(u64, &CompletedSeed)> {
    let wanted = seed.or(record.best_seed).ok_or_else(|| {
        ApiError::from(CpmError::NotFound(format!("round {} has no completed seed", record.round_index)))
    })?;
    record
        .completed()
        .find(|(s, _)| *s == wanted)
        .ok_or_else(|| CpmError::NotFound(format!("completed seed {wanted}")).into())
}

async fn concepts(
    State(state): State<AppState>,
    UrlPath((id, n)): UrlPath<(String, u32)>,
    Query(q): Query<SeedQuery>,
) -> ApiResult {
    let record = load(&state, id, n).await?;
    let (seed, completed) = pick_seed(&record, q.seed)?;
    let rows: Vec<Value> = completed
        .metrics
        .concepts
        .iter()
        .map(|c| {
            json!({
                "question": c.question,
                "sign_prior": c.sign_prior,
                "coefficient": c.coefficient,
                "sign_ok": c.sign_ok,
                "prevalence": c.prevalence,
                "ci": [c.ci_lower, c.ci_upper],
                "annotation_failures": c.annotation_failures,
            })
        })
        .collect();
    Ok(Json(json!({
        "run_id": record.run_id,
        "round": record.round_index,
        "seed": seed,
        "best_seed": record.best_seed,
        "intercept": completed.final_model.intercept,
        "concepts": rows,
    })))
}

async fn metrics(State(state): State<AppState>, UrlPath((id, n)): UrlPath<(String, u32)>) -> ApiResult {
    let record = load(&state, id, n).await?;
    let seeds: Vec<Value> = record
        .per_seed
        .iter()
        .map(|s| match &s.outcome {
            SeedOutcome::Completed(c) => json!({
                "seed": s.seed,
                "status": "completed",
                "initial_auc": c.initial.validation_metric,
                "final_auc": c.final_model.validation_metric,
                "converged": c.converged,
                "sweeps_run": c.sweeps_run,
                "validation": c.metrics.validation,
            }),
            SeedOutcome::Failed { error } => json!({ "seed": s.seed, "status": "failed", "error": error }),
        })
        .collect();
    Ok(Json(json!({
        "run_id": record.run_id,
        "round": record.round_index,
        "best_seed": record.best_seed,
        "stability": record.stability,
        "penalty_note": record.penalty_note,
        "seeds": seeds,
    })))
}

async fn annotations(
    State(state): State<AppState>,
    UrlPath((id, n)): UrlPath<(String, u32)>,
    Query(q): Query<SeedQuery>,
) -> ApiResult {
    let record = load(&state, id.clone(), n).await?;
    let (seed, completed) = pick_seed(&record, q.seed)?;
    let root = state.root.clone();
    let lines = blocking(move || Ok(load_annotation_lines(&root, &id, n)?)).await?;
    let rows: Vec<Value> = lines
        .into_iter()
        .filter(|l| l.seed == seed)
        .map(|l| json!({ "note_id": l.note_id, "values": l.values, "failed": l.failed }))
        .collect();
    Ok(Json(json!({
        "seed": seed,
        "questions": completed.final_model.questions(),
        "rows": rows,
    })))
}

async fn mispredictions(
    State(state): State<AppState>,
    UrlPath((id, n)): UrlPath<(String, u32)>,
    Query(q): Query<SeedQuery>,
) -> ApiResult {
    let record = load(&state, id, n).await?;
    let (seed, completed) = pick_seed(&record, q.seed)?;
    let point = completed.metrics.validation.operating_point;
    let rows: Vec<Value> = completed
        .metrics
        .predictions
        .iter()
        .filter_map(|p| {
            let predicted = u8::from(p.probability > point.threshold);
            (predicted != p.label).then(|| {
                json!({
                    "note_id": p.note_id,
                    "label": p.label,
                    "predicted": predicted,
                    "probability": p.probability,
                })
            })
        })
        .collect();
    Ok(Json(json!({
        "seed": seed,
        "operating_point": point,
        "mispredictions": rows,
    })))
}

async fn trace(State(state): State<AppState>, UrlPath((id, n)): UrlPath<(String, u32)>) -> ApiResult {
    let record = load(&state, id, n).await?;
    let seeds: Vec<Value> = record
        .per_seed
        .iter()
        .map(|s| match &s.outcome {
            SeedOutcome::Completed(c) => json!({
                "seed": s.seed,
                "status": "completed",
                "initial": c.initial,
                "traces": c.traces,
                "sweeps_run": c.sweeps_run,
                "converged": c.converged,
            }),
            SeedOutcome::Failed { error } => json!({ "seed": s.seed, "status": "failed", "error": error }),
        })
        .collect();
    Ok(Json(json!({ "run_id": record.run_id, "round": record.round_index, "seeds": seeds })))
}

async fn config(State(state): State<AppState>, UrlPath((id, n)): UrlPath<(String, u32)>) -> ApiResult {
    run_exists(&state, &id)?;
    let root = state.root.clone();
    blocking(move || {
        let lineage = Lineage::open(&root, &id)?;
        let entry = lineage
            .entries()?
            .into_iter()
            .find(|e| e.round_index == n)
            .ok_or_else(|| CpmError::NotFound(format!("run {id} round {n} config")))?;
        let config = lineage.config(n)?;
        let diff = match entry.parent {
            Some(parent) => ConfigDiff::between(&lineage.config(parent)?, &config)?,
            None => ConfigDiff::default(),
        };
        Ok(Json(json!({
            "round": n,
            "parent": entry.parent,
            "actions": entry.actions,
            "config_sha256": entry.config_sha256,
            "config": config,
            "diff": diff,
        })))
    })
    .await
}

async fn feedback(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<Vec<FeedbackAction>>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    run_exists(&state, &id)?;
    let Json(actions) = body.map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()))?;
    let root = state.root.clone();
    blocking(move || {
        let groups: Option<BTreeSet<String>> = match RunManifest::load(&root, &id) {
            Ok(m) => Some(m.corpus()?.groups()),
            Err(ServiceError::Core(CpmError::NotFound(_))) => None,
            Err(e) => return Err(e.into()),
        };
        let lineage = Lineage::open(&root, &id)?;
        let (round, config, diff) = lineage.record_feedback(&actions, groups.as_ref())?;
        Ok((
            StatusCode::CREATED,
            Json(json!({ "round": round, "config": config, "diff": diff })),
        ))
    })
    .await
}

async fn start(
    State(state): State<AppState>,
    UrlPath((id, n)): UrlPath<(String, u32)>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    run_exists(&state, &id)?;
    let root = state.root.clone();
    {
        let lineage = Lineage::open(&root, &id)?;
        if !lineage.config_path(n).is_file() {
            return Err(CpmError::NotFound(format!("run {id} round {n} config")).into());
        }
        if round_dir(&root, &id, n)?.exists() {
            return Err(ServiceError::Conflict(format!("round {n} of {id} has already run")).into());
        }
    }
    let started_at = Utc::now();
    {
        let mut jobs = state.jobs.lock().expect("job table poisoned");
        if let Some((round, RoundState::Running { .. })) = jobs.get(&id) {
            return Err(ServiceError::Conflict(format!("round {round} of {id} is running")).into());
        }
        jobs.insert(id.clone(), (n, RoundState::Running { started_at }));
    }
    let jobs = state.jobs.clone();
    let run_id = id.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = execute_round(&root, &run_id, n, started_at);
        let next = match outcome {
            Ok(_) => RoundState::Completed,
            Err(e) => {
                tracing::error!(run_id, round = n, error = %e, "round failed");
                RoundState::Failed {
                    error: e.to_string(),
                    finished_at: Utc::now(),
                }
            }
        };
        jobs.lock().expect("job table poisoned").insert(run_id, (n, next));
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "run_id": id, "round": n, "state": "running", "started_at": started_at })),
    ))
}

async fn status(State(state): State<AppState>, UrlPath((id, n)): UrlPath<(String, u32)>) -> ApiResult {
    run_exists(&state, &id)?;
    let state_now = if round_dir(state.root(), &id, n)?.is_dir() {
        RoundState::Completed
    } else {
        match state.job(&id) {
            Some((round, s)) if round == n => s,
            _ if Lineage::open(state.root(), &id)?.config_path(n).is_file() => RoundState::Pending,
            _ => return Err(CpmError::NotFound(format!("run {id} round {n}")).into()),
        }
    };
    Ok(Json(json!({ "run_id": id, "round": n, "status": state_now })))
}
