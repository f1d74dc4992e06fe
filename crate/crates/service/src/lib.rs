//! HTTP/JSON front end for the scoring loop.
//!
//! | method | path                 | purpose                                         |
//! |--------|----------------------|-------------------------------------------------|
//! | GET    | `/api/pending?limit` | melodies with the fewest scores                 |
//! | POST   | `/api/scores`        | record one score `{melody_id, score}`           |
//! | POST   | `/api/train`         | start training the surrogate (202 + job)        |
//! | POST   | `/api/generate`      | start surrogate-driven generation (202 + job)   |
//! | GET    | `/api/jobs/{id}`     | poll a job                                      |
//!
//! Everything else is served from the static directory, if one is configured.
//! Errors are JSON objects `{"error": <code>, "message": <text>}`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::services::ServeDir;

use melodyevo::abc::{self, Headers};
use melodyevo::ga::Melody;
use melodyevo::pipeline::{self, CorpusContext, PipelineConfig, PipelineError};
use melodyevo::score_store::{ScoredMelody, SharedStore, StoreError};
use melodyevo::surrogate::SurrogateModel;

pub const DEFAULT_PENDING_LIMIT: usize = 10;
pub const MAX_PENDING_LIMIT: usize = 1000;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("job {0} not found")]
    UnknownJob(u64),
    #[error("a {0} job is already running (job {1})")]
    JobAlreadyRunning(JobKind, u64),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ApiError {
    fn status_and_code(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::UnknownJob(_) => (StatusCode::NOT_FOUND, "unknown_job"),
            ApiError::JobAlreadyRunning(..) => (StatusCode::CONFLICT, "job_already_running"),
            ApiError::Store(StoreError::UnknownMelody(_)) => (StatusCode::NOT_FOUND, "unknown_melody"),
            ApiError::Store(StoreError::ScoreOutOfRange(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "score_out_of_range"),
            ApiError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        let body = ErrorBody {
            error: code.to_string(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Train,
    Generate,
}

impl std::fmt::Display for JobKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            JobKind::Train => "train",
            JobKind::Generate => "generate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingItem {
    pub melody_id: String,
    /// A complete ABC tune, headers included.
    pub abc_text: String,
    pub score_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub melody_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub melody_id: String,
    pub score_count: usize,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedMelody {
    pub melody_id: String,
    pub abc_text: String,
    pub predicted_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobResult {
    Train { training_examples: usize, final_mse: f64 },
    Generate { melodies: Vec<GeneratedMelody> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded { result: JobResult },
    Failed { error: ErrorBody },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: u64,
    pub kind: JobKind,
    #[serde(flatten)]
    pub state: JobState,
}

#[derive(Debug, Default)]
struct JobTable {
    next_id: u64,
    jobs: HashMap<u64, JobStatus>,
    running: HashMap<JobKind, u64>,
}

/// Shared state behind every handler.
#[derive(Clone)]
pub struct AppState {
    store: Arc<SharedStore>,
    ctx: Arc<CorpusContext>,
    config: Arc<PipelineConfig>,
    jobs: Arc<Mutex<JobTable>>,
}

impl AppState {
    pub fn new(store: SharedStore, ctx: CorpusContext, config: PipelineConfig) -> Self {
        AppState {
            store: Arc::new(store),
            ctx: Arc::new(ctx),
            config: Arc::new(config),
            jobs: Arc::default(),
        }
    }

    pub fn store(&self) -> &SharedStore {
        &self.store
    }

    fn jobs(&self) -> MutexGuard<'_, JobTable> {
        // a panicking job leaves the table consistent, so poisoning is ignored
        self.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// The API router, with `static_dir` (if any) served for every other path.
pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/pending", get(pending))
        .route("/api/scores", post(submit_score))
        .route("/api/train", post(start_train))
        .route("/api/generate", post(start_generate))
        .route("/api/jobs/{id}", get(job_status))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

fn abc_text(item_id: &str, melody: &Melody) -> String {
    let mut headers = Headers::minimal();
    headers.set('T', item_id);
    abc::render(melody.tokens(), &headers)
}

fn pending_item(m: ScoredMelody) -> PendingItem {
    PendingItem {
        abc_text: abc_text(&m.melody_id, &m.melody),
        score_count: m.scores.len(),
        melody_id: m.melody_id,
    }
}

async fn pending(
    State(state): State<AppState>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Json<Vec<PendingItem>>, ApiError> {
    let limit = match query.get("limit") {
        None => DEFAULT_PENDING_LIMIT,
        Some(raw) => match raw.parse::<usize>() {
            Ok(n) if (1..=MAX_PENDING_LIMIT).contains(&n) => n,
            _ => {
                return Err(ApiError::BadRequest(format!(
                    "limit must be an integer in 1..={MAX_PENDING_LIMIT}, got `{raw}`"
                )))
            }
        },
    };
    let items = state.store.read().pending(limit);
    Ok(Json(items.into_iter().map(pending_item).collect()))
}

async fn submit_score(
    State(state): State<AppState>,
    body: Result<Json<ScoreRequest>, JsonRejection>,
) -> Result<Json<ScoreResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let updated = state.store.write().add_score(&req.melody_id, req.score)?;
    Ok(Json(ScoreResponse {
        melody_id: updated.melody_id,
        score_count: updated.scores.len(),
        mean_score: updated.mean_score,
    }))
}

async fn start_train(State(state): State<AppState>) -> Result<(StatusCode, Json<JobStatus>), ApiError> {
    start_job(state, JobKind::Train)
}

async fn start_generate(State(state): State<AppState>) -> Result<(StatusCode, Json<JobStatus>), ApiError> {
    start_job(state, JobKind::Generate)
}

async fn job_status(State(state): State<AppState>, UrlPath(id): UrlPath<u64>) -> Result<Json<JobStatus>, ApiError> {
    state
        .jobs()
        .jobs
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or(ApiError::UnknownJob(id))
}

fn start_job(state: AppState, kind: JobKind) -> Result<(StatusCode, Json<JobStatus>), ApiError> {
    let status = {
        let mut table = state.jobs();
        if let Some(&id) = table.running.get(&kind) {
            return Err(ApiError::JobAlreadyRunning(kind, id));
        }
        table.next_id += 1;
        let id = table.next_id;
        let status = JobStatus {
            id,
            kind,
            state: JobState::Running,
        };
        table.running.insert(kind, id);
        table.jobs.insert(id, status.clone());
        status
    };
    info!("job {} ({kind}) started", status.id);
    let id = status.id;
    let worker = state.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = match kind {
            JobKind::Train => run_train(&worker),
            JobKind::Generate => run_generate(&worker, id),
        };
        let state = match outcome {
            Ok(result) => JobState::Succeeded { result },
            Err(e) => {
                warn!("job {id} ({kind}) failed: {e}");
                JobState::Failed { error: job_error(&e) }
            }
        };
        let mut table = worker.jobs();
        table.running.remove(&kind);
        table.jobs.insert(id, JobStatus { id, kind, state });
    });
    Ok((StatusCode::ACCEPTED, Json(status)))
}

fn job_error(e: &PipelineError) -> ErrorBody {
    let code = match e {
        PipelineError::InsufficientScores { .. } => "insufficient_scores",
        PipelineError::Surrogate(_) => "surrogate",
        PipelineError::Store(_) => "storage",
        PipelineError::Io(..) => "io",
        _ => "pipeline",
    };
    ErrorBody {
        error: code.to_string(),
        message: e.to_string(),
    }
}

fn run_train(state: &AppState) -> Result<JobResult, PipelineError> {
    let config = &state.config;
    // snapshot, so submissions are not blocked while the model trains
    let data = state.store.read().training_set(config.min_scores);
    let trained = pipeline::train_surrogate(config, &state.ctx.index.token_alphabet(), data)?;
    pipeline::save_phase2(config, &trained)?;
    Ok(JobResult::Train {
        training_examples: trained.training_examples,
        final_mse: trained.report.final_mse(),
    })
}

fn run_generate(state: &AppState, job_id: u64) -> Result<JobResult, PipelineError> {
    let model = SurrogateModel::load(&state.config.model_path)?;
    let mut config = (*state.config).clone();
    // each generation job explores from its own seed
    config.phase3.rng_seed = config.phase3.rng_seed.wrapping_add(job_id);
    let report = pipeline::phase3(&config, &state.ctx, &model)?;
    let mut store = state.store.write();
    let melodies = report
        .selected
        .iter()
        .map(|(melody, predicted)| {
            let melody_id = store.put_melody(melody)?;
            Ok(GeneratedMelody {
                abc_text: abc_text(&melody_id, melody),
                melody_id,
                predicted_score: *predicted,
            })
        })
        .collect::<Result<Vec<_>, StoreError>>()?;
    Ok(JobResult::Generate { melodies })
}
