//! Read-only HTTP/JSON service over a store loaded at startup.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::cotravel::{CoTravelIndex, CoTravelMatch, DEFAULT_WINDOW_SECONDS};
use crate::error::Error;
use crate::event::{CardId, DateRange};
use crate::query::{self, CardTimeline, CensusEntry, Constraint, GapRecord, QuerySummary};
use crate::release::{self, AggregateRow, PrivacyParams, ReleaseMetadata};
use crate::store::EventStore;
use crate::unicity::{self, UnicityParams, UnicityReport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServiceConfig {
    pub data_path: PathBuf,
    pub bind_address: String,
    #[serde(default = "default_preview")]
    pub max_candidate_preview: usize,
    #[serde(default = "default_timeout")]
    pub request_timeout_seconds: u64,
}

fn default_preview() -> usize {
    50
}

fn default_timeout() -> u64 {
    30
}

impl ServiceConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.max_candidate_preview == 0 {
            return Err(Error::InvalidConfig("maxCandidatePreview must be at least 1".into()));
        }
        if self.request_timeout_seconds == 0 {
            return Err(Error::InvalidConfig("requestTimeoutSeconds must be at least 1".into()));
        }
        self.bind_address
            .parse::<SocketAddr>()
            .map_err(|e| Error::InvalidConfig(format!("bindAddress: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "camelCase")]
pub enum JobState {
    Running,
    Done { report: UnicityReport },
    Failed { error: String, code: String },
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
struct JobView {
    job_id: u64,
    #[serde(flatten)]
    state: JobState,
}

struct Shared {
    store: EventStore,
    cotravel: CoTravelIndex,
    max_preview: usize,
    timeout: Duration,
    next_job: AtomicU64,
    jobs: Mutex<BTreeMap<u64, JobState>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(store: EventStore, max_candidate_preview: usize, request_timeout: Duration) -> Self {
        let cotravel = CoTravelIndex::build(&store);
        AppState(Arc::new(Shared {
            store,
            cotravel,
            max_preview: max_candidate_preview.max(1),
            timeout: request_timeout,
            next_job: AtomicU64::new(1),
            jobs: Mutex::new(BTreeMap::new()),
        }))
    }
}

/// Error body `{"error": ..., "code": ...}` with a matching status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    code: &'static str,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownCard(_) => StatusCode::NOT_FOUND,
            Error::InvalidParams(_) | Error::InvalidBlock(_) | Error::StoreTooLarge { .. } | Error::Json(_) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, message: e.to_string(), code: e.code() }
    }
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), code }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.message, "code": self.code });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/query", post(query_handler))
        .route("/cards/{id}/timeline", get(timeline_handler))
        .route("/cards/{id}/cotravellers", get(cotravellers_handler))
        .route("/unicity", post(unicity_handler))
        .route("/jobs/{id}", get(job_handler))
        .route("/audit/gaps", get(gaps_handler))
        .route("/audit/types", get(types_handler))
        .route("/release/aggregate", post(release_handler))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .layer(middleware::from_fn_with_state(state.clone(), timeout_layer))
        .with_state(state)
}

async fn timeout_layer(State(state): State<AppState>, request: Request, next: Next) -> Response {
    match tokio::time::timeout(state.0.timeout, next.run(request)).await {
        Ok(response) => response,
        Err(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "timeout", "request timed out").into_response(),
    }
}

/// Run a blocking computation off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Shared) -> crate::Result<T> + Send + 'static,
{
    let shared = state.0.clone();
    tokio::task::spawn_blocking(move || f(&shared))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn json_body<T: serde::de::DeserializeOwned>(body: &str) -> Result<T, ApiError> {
    let body = if body.trim().is_empty() { "{}" } else { body };
    serde_json::from_str(body).map_err(|e| ApiError::from(Error::Json(e)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    #[serde(default)]
    constraints: Vec<Constraint>,
}

async fn query_handler(State(state): State<AppState>, body: String) -> ApiResult<QuerySummary> {
    let request: QueryRequest = json_body(&body)?;
    blocking(&state, move |s| {
        let candidates = query::evaluate(&s.store, &request.constraints)?;
        query::summarize(&s.store, &candidates, s.max_preview)
    })
    .await
    .map(Json)
}

fn card_id(raw: &str) -> Result<CardId, ApiError> {
    raw.parse::<u64>()
        .map(CardId)
        .map_err(|_| ApiError::from(Error::InvalidParams(format!("bad card id `{raw}`"))))
}

async fn timeline_handler(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<CardTimeline> {
    let card = card_id(&id)?;
    blocking(&state, move |s| query::card_timeline(&s.store, card)).await.map(Json)
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
struct CoTravelQuery {
    window: Option<i64>,
    date: Option<NaiveDate>,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
}

impl CoTravelQuery {
    fn period(&self) -> crate::Result<Option<DateRange>> {
        match (self.date, self.from, self.to) {
            (Some(d), None, None) => Ok(Some(DateRange::single(d))),
            (Some(_), _, _) => Err(Error::InvalidParams("use either date or from/to".into())),
            (None, Some(f), Some(t)) => DateRange::new(f, t).map(Some),
            (None, Some(f), None) => DateRange::new(f, NaiveDate::MAX).map(Some),
            (None, None, Some(t)) => DateRange::new(NaiveDate::MIN, t).map(Some),
            (None, None, None) => Ok(None),
        }
    }
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct CoTravelResponse {
    card_id: CardId,
    window_seconds: i64,
    matches: Vec<CoTravelMatch>,
}

async fn cotravellers_handler(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<CoTravelQuery>,
) -> ApiResult<CoTravelResponse> {
    let card = card_id(&id)?;
    let period = q.period()?;
    let window = q.window.unwrap_or(DEFAULT_WINDOW_SECONDS);
    blocking(&state, move |s| {
        let matches = s.cotravel.cotravellers(&s.store, card, window, period.as_ref())?;
        Ok(CoTravelResponse { card_id: card, window_seconds: window, matches })
    })
    .await
    .map(Json)
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct JobCreated {
    job_id: u64,
}

async fn unicity_handler(State(state): State<AppState>, body: String) -> Result<(StatusCode, Json<JobCreated>), ApiError> {
    let params: UnicityParams = json_body(&body)?;
    params.validate()?;
    let shared = state.0.clone();
    let job_id = shared.next_job.fetch_add(1, Ordering::Relaxed);
    shared.jobs.lock().expect("job table").insert(job_id, JobState::Running);
    // The job outlives the request; its handle is dropped on purpose.
    tokio::task::spawn_blocking(move || {
        let outcome = match unicity::run_unicity(&shared.store, &params) {
            Ok(report) => JobState::Done { report },
            Err(e) => JobState::Failed { error: e.to_string(), code: e.code().into() },
        };
        shared.jobs.lock().expect("job table").insert(job_id, outcome);
    });
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id })))
}

async fn job_handler(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    let job_id: u64 = id
        .parse()
        .map_err(|_| ApiError::from(Error::InvalidParams(format!("bad job id `{id}`"))))?;
    let jobs = state.0.jobs.lock().expect("job table");
    let state = jobs
        .get(&job_id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_job", format!("unknown job {job_id}")))?;
    Ok(Json(JobView { job_id, state }))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct GapQuery {
    min_gap: Option<u64>,
}

async fn gaps_handler(State(state): State<AppState>, Query(q): Query<GapQuery>) -> ApiResult<Vec<GapRecord>> {
    let min_gap = q.min_gap.unwrap_or(1);
    blocking(&state, move |s| query::id_gap_scan(&s.store, min_gap)).await.map(Json)
}

#[derive(Debug, Deserialize)]
struct TypesQuery {
    threshold: Option<usize>,
}

async fn types_handler(State(state): State<AppState>, Query(q): Query<TypesQuery>) -> ApiResult<Vec<CensusEntry>> {
    let threshold = q.threshold.unwrap_or(query::DEFAULT_SENSITIVITY_THRESHOLD);
    blocking(&state, move |s| Ok(query::card_type_census(&s.store, threshold).into_values().collect()))
        .await
        .map(Json)
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ReleaseRequest {
    #[serde(default = "default_block")]
    block_minutes: u32,
    #[serde(default)]
    period: Option<DateRange>,
    #[serde(default)]
    privacy: Option<PrivacyParams>,
}

fn default_block() -> u32 {
    release::DEFAULT_BLOCK_MINUTES
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct ReleaseResponse {
    block_minutes: u32,
    rows: Vec<AggregateRow>,
    metadata: Option<ReleaseMetadata>,
}

async fn release_handler(State(state): State<AppState>, body: String) -> ApiResult<ReleaseResponse> {
    let request: ReleaseRequest = json_body(&body)?;
    blocking(&state, move |s| {
        let (table, metadata) = release::release(&s.store, request.block_minutes, request.period, request.privacy.as_ref())?;
        Ok(ReleaseResponse { block_minutes: table.block_minutes, rows: table.rows, metadata })
    })
    .await
    .map(Json)
}

/// Load the configured store and serve until ctrl-c.
pub async fn serve(config: ServiceConfig) -> crate::Result<()> {
    config.validate()?;
    let path = config.data_path.clone();
    let loaded = tokio::task::spawn_blocking(move || crate::csv_io::load_path(&path))
        .await
        .map_err(|e| Error::InvalidConfig(e.to_string()))??;
    for (file, e) in &loaded.errors {
        eprintln!("{}: skipped row {}: {}", file.display(), e.row, e.reason);
    }
    let state = AppState::new(loaded.store, config.max_candidate_preview, Duration::from_secs(config.request_timeout_seconds));
    let listener = tokio::net::TcpListener::bind(&config.bind_address).await.map_err(Error::UnreadableSource)?;
    eprintln!("listening on {}", listener.local_addr().map_err(Error::UnreadableSource)?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(Error::UnwritableSink)
}
