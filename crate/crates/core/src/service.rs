//! HTTP interface for plan navigation.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | GET | `/api/plan` | | plan JSON |
//! | GET | `/api/report` | | run report JSON |
//! | POST | `/api/session` | | new session |
//! | GET | `/api/session/{id}` | | session |
//! | POST | `/api/session/{id}/observe` | `{"measurement"?, "value"}` | `{"advice", "session"}` |
//!
//! Errors reply with `{"error": {"code", "message"}}`. Codes: `not_found`,
//! `session_not_found`, `invalid_request`, `invalid_value`, `session_state`.
//! Anything else under `/` is served from the static asset directory.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::advise::{Advice, AdviseSession};
use crate::error::Error;
use crate::model::MeasurementStep;
use crate::pomcp::PlanTree;
use crate::run::RunReport;

pub struct AppState {
    plan: PlanTree,
    report: Option<RunReport>,
    sessions: Mutex<HashMap<String, AdviseSession>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(plan: PlanTree, report: Option<RunReport>) -> Self {
        Self { plan, report, sessions: Mutex::new(HashMap::new()), next_id: AtomicU64::new(1) }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": { "code": self.code, "message": self.message } }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::SessionState(m) => ApiError::new(StatusCode::CONFLICT, "session_state", m),
            Error::InvalidState(m) => ApiError::new(StatusCode::BAD_REQUEST, "invalid_value", m),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", r.body_text())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserveRequest {
    #[serde(default)]
    pub measurement: Option<String>,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObserveReply {
    pub advice: Advice,
    pub session: AdviseSession,
}

type Shared = Arc<AppState>;

async fn get_plan(State(s): State<Shared>) -> Json<PlanTree> {
    Json(s.plan.clone())
}

async fn get_report(State(s): State<Shared>) -> Result<Json<RunReport>, ApiError> {
    s.report
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", "no evaluation report loaded"))
}

async fn create_session(State(s): State<Shared>) -> (StatusCode, Json<AdviseSession>) {
    let id = format!("s{}", s.next_id.fetch_add(1, Ordering::Relaxed));
    let session = AdviseSession::new(id.clone(), &s.plan);
    s.sessions.lock().expect("session lock").insert(id, session.clone());
    (StatusCode::CREATED, Json(session))
}

fn unknown_session(id: &str) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session `{id}`"))
}

async fn get_session(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<AdviseSession>, ApiError> {
    let sessions = s.sessions.lock().expect("session lock");
    sessions.get(&id).cloned().map(Json).ok_or_else(|| unknown_session(&id))
}

async fn observe(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<ObserveRequest>, JsonRejection>,
) -> Result<Json<ObserveReply>, ApiError> {
    let Json(req) = body?;
    let measurement = req
        .measurement
        .as_deref()
        .map(|m| m.parse::<MeasurementStep>())
        .transpose()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()))?;
    let mut sessions = s.sessions.lock().expect("session lock");
    let session = sessions.get_mut(&id).ok_or_else(|| unknown_session(&id))?;
    let advice = session.observe(&s.plan, measurement, req.value)?;
    Ok(Json(ObserveReply { advice, session: session.clone() }))
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

/// All routes; static assets are served from `static_dir` when given.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/plan", get(get_plan))
        .route("/report", get(get_report))
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_session))
        .route("/session/{id}/observe", post(observe))
        .fallback(api_not_found);
    let app = Router::new().nest("/api", api).with_state(Arc::new(state));
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Bind and serve until the process is stopped.
pub async fn serve(state: AppState, static_dir: Option<PathBuf>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await
}
