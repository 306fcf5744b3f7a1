//! `/v1` HTTP endpoints over a single-writer [`Engine`].

use std::path::Path;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use complyflow::domain::{CaseStatus, Decision, Event};
use complyflow::engine::{Engine, EngineError, ModelBundle, ModelKind};
use complyflow::rules::parse_rules;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::sysstat;

pub const DEFAULT_CASE_LIMIT: usize = 100;

pub struct AppState {
    engine: RwLock<Engine>,
    token: Option<String>,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(engine: Engine, token: Option<String>) -> Shared {
        Arc::new(Self { engine: RwLock::new(engine), token })
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Engine> {
        self.engine.read().unwrap_or_else(|p| p.into_inner())
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, Engine> {
        self.engine.write().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, code, message: message.into() }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        use EngineError::*;
        let status = match &e {
            DuplicateEvent(_) | AlreadyResolved(_) | NotReviewable { .. } => StatusCode::CONFLICT,
            UnknownCase(_) => StatusCode::NOT_FOUND,
            InvalidEvent(_) | InvalidVerdict(_) | Rules(_) | Config(_) | Model(_) => StatusCode::BAD_REQUEST,
            ModelNotLoaded(_) => StatusCode::SERVICE_UNAVAILABLE,
            CorruptRecord(_) | GapDetected(_) | Snapshot(_) | Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, code: e.code(), message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error_code": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn now_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64)
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8], code: &'static str) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(code, e.to_string()))
}

async fn require_token(State(state): State<Shared>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError { status: StatusCode::UNAUTHORIZED, code: "unauthorized", message: "missing or wrong bearer token".into() }
                .into_response();
        }
    }
    next.run(req).await
}

async fn post_events(State(state): State<Shared>, body: Bytes) -> ApiResult<Response> {
    let value: Value = parse_json(&body, "invalid_event")?;
    if value.is_array() {
        let events: Vec<Event> = serde_json::from_value(value).map_err(|e| ApiError::bad_request("invalid_event", e.to_string()))?;
        let mut engine = state.write();
        let mut results = Vec::with_capacity(events.len());
        let mut accepted = 0;
        for event in events {
            let id = event.id.clone();
            match engine.ingest(event) {
                Ok(case) => {
                    accepted += 1;
                    results.push(json!({ "event_id": id, "case": case }));
                }
                Err(e) => {
                    let e = ApiError::from(e);
                    results.push(json!({ "event_id": id, "error_code": e.code, "message": e.message }));
                }
            }
        }
        let rejected = results.len() - accepted;
        return Ok(Json(json!({ "accepted": accepted, "rejected": rejected, "results": results })).into_response());
    }
    let event: Event = serde_json::from_value(value).map_err(|e| ApiError::bad_request("invalid_event", e.to_string()))?;
    let case = state.write().ingest(event)?;
    Ok(Json(case).into_response())
}

#[derive(Deserialize)]
struct RulesQuery {
    #[serde(default)]
    dry_run: bool,
}

async fn post_rules(State(state): State<Shared>, Query(q): Query<RulesQuery>, body: String) -> ApiResult<Json<Value>> {
    let rules = parse_rules(&body).map_err(EngineError::from)?;
    if !q.dry_run {
        state.write().load_rules(&body)?;
    }
    Ok(Json(json!({
        "valid": true,
        "applied": !q.dry_run,
        "rule_count": rules.len(),
        "canonical": rules.canonical(),
    })))
}

#[derive(Deserialize)]
struct CasesQuery {
    status: Option<String>,
    limit: Option<usize>,
}

fn parse_status(s: &str) -> ApiResult<CaseStatus> {
    CaseStatus::ALL
        .into_iter()
        .find(|st| st.as_str() == s)
        .ok_or_else(|| ApiError::bad_request("invalid_query", format!("unknown status {s:?}")))
}

async fn get_cases(State(state): State<Shared>, Query(q): Query<CasesQuery>) -> ApiResult<Json<Value>> {
    let status = q.status.as_deref().map(parse_status).transpose()?;
    let limit = q.limit.unwrap_or(DEFAULT_CASE_LIMIT);
    let engine = state.read();
    let cases = engine.cases(status, limit);
    let total = match status {
        Some(CaseStatus::PendingReview) => engine.state().queue.len(),
        Some(s) => engine.state().cases.values().filter(|c| c.status == s).count(),
        None => engine.state().cases.len(),
    };
    Ok(Json(json!({ "cases": cases, "count": cases.len(), "total": total })))
}

async fn get_case(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let engine = state.read();
    let (case, trace) = engine.case(&id).ok_or(EngineError::UnknownCase(id))?;
    Ok(Json(json!({ "case": case, "trace": trace })))
}

#[derive(Deserialize)]
struct VerdictBody {
    decision: Decision,
    reviewer_id: String,
    timestamp: Option<i64>,
}

async fn post_verdict(State(state): State<Shared>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let v: VerdictBody = parse_json(&body, "invalid_verdict")?;
    let case = state.write().submit_verdict(&id, v.decision, &v.reviewer_id, v.timestamp.unwrap_or_else(now_ms))?;
    Ok(Json(json!(case)))
}

#[derive(Deserialize)]
struct AlertsQuery {
    #[serde(default)]
    since_seq: u64,
}

async fn get_alerts(State(state): State<Shared>, Query(q): Query<AlertsQuery>) -> Json<Value> {
    let engine = state.read();
    let alerts = engine.alerts_since(q.since_seq);
    let next = alerts.last().map_or(q.since_seq, |a| a.seq);
    Json(json!({ "alerts": alerts, "next_since_seq": next }))
}

async fn get_metrics(State(state): State<Shared>) -> Json<Value> {
    let mut m = serde_json::to_value(state.read().metrics()).expect("metrics serialize");
    m["process"] = json!(sysstat::current());
    Json(m)
}

async fn get_labels(State(state): State<Shared>) -> Response {
    let body = state.read().export_labels();
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

#[derive(Deserialize)]
struct ModelBody {
    kind: String,
    checkpoint_path: String,
}

/// `kind` is one of the model kinds, or `bundle` for a directory holding all of them.
async fn post_model(State(state): State<Shared>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: ModelBody = parse_json(&body, "invalid_request")?;
    let path = Path::new(&b.checkpoint_path);
    if !path.exists() {
        return Err(ApiError::bad_request("model_error", format!("{} does not exist", path.display())));
    }
    let mut engine = state.write();
    if b.kind == "bundle" {
        engine.set_models(ModelBundle::load_dir(path)?)?;
    } else {
        let kind: ModelKind = b.kind.parse()?;
        engine.load_model(kind, path)?;
    }
    let rescored = engine.rescore_parked()?;
    let models = engine.models();
    Ok(Json(json!({
        "loaded": b.kind,
        "rescored": rescored,
        "models_loaded": models.loaded().iter().map(|k| k.as_str()).collect::<Vec<_>>(),
        "missing": models.missing().map(ModelKind::as_str),
    })))
}

async fn health(State(state): State<Shared>) -> Json<Value> {
    let engine = state.read();
    let models = engine.models();
    Json(json!({
        "status": "ok",
        "seq": engine.state().seq,
        "rules": engine.rules().len(),
        "models_loaded": models.loaded().iter().map(|k| k.as_str()).collect::<Vec<_>>(),
        "missing": models.missing().map(ModelKind::as_str),
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

pub fn router(state: Shared) -> Router {
    let protected = Router::new()
        .route("/v1/events", post(post_events))
        .route("/v1/rules", post(post_rules))
        .route("/v1/cases", get(get_cases))
        .route("/v1/cases/{id}", get(get_case))
        .route("/v1/cases/{id}/verdict", post(post_verdict))
        .route("/v1/alerts", get(get_alerts))
        .route("/v1/metrics", get(get_metrics))
        .route("/v1/labels/export", get(get_labels))
        .route("/v1/admin/models", post(post_model))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new().route("/v1/health", get(health)).merge(protected).with_state(state)
}
