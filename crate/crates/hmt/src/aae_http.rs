//! HTTP front of the after-action explanation service.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hmt_core::aae::{AaeError, AaeService};
use hmt_core::replay::parse_kinds;
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::CorsLayer;

pub const DEFAULT_PORT: u16 = 8500;

pub struct ApiError(AaeError);

impl From<AaeError> for ApiError {
    fn from(e: AaeError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0 {
            AaeError::MissionNotFound(_) | AaeError::SessionNotFound(_) => StatusCode::NOT_FOUND,
            AaeError::ContextMissing(_) => StatusCode::CONFLICT,
            AaeError::EmptyQuery | AaeError::BadRequest(_) => StatusCode::BAD_REQUEST,
            AaeError::LlmUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            AaeError::Timeline(_) => StatusCode::UNPROCESSABLE_ENTITY,
            AaeError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({ "error": self.0.code(), "detail": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

type Shared = Arc<AaeService>;

/// Runs service work off the async executor.
async fn blocking<T: Send + 'static>(
    svc: &Shared,
    f: impl FnOnce(&AaeService) -> Result<T, AaeError> + Send + 'static,
) -> Result<T, ApiError> {
    let svc = svc.clone();
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| AaeError::Internal(e.to_string()))?
        .map_err(ApiError)
}

pub fn router(service: AaeService) -> Router {
    Router::new()
        .route("/missions", get(list_missions))
        .route("/missions/{id}/timeline", get(timeline))
        .route("/missions/{id}/context", get(context))
        .route("/missions/{id}/markers", get(markers))
        .route("/missions/{id}/frame", get(frame))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/query", post(query))
        .layer(CorsLayer::permissive())
        .with_state(Arc::new(service))
}

async fn list_missions(State(svc): State<Shared>) -> Result<Response, ApiError> {
    let list = blocking(&svc, |s| s.missions.list()).await?;
    Ok(Json(list).into_response())
}

async fn timeline(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let bytes = blocking(&svc, move |s| s.missions.timeline_bytes(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn context(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let doc = blocking(&svc, move |s| s.missions.context(&id)).await?;
    Ok((
        [(header::CONTENT_TYPE, "text/markdown; charset=utf-8")],
        doc.text().to_string(),
    )
        .into_response())
}

#[derive(Deserialize)]
struct MarkerParams {
    #[serde(default)]
    kinds: String,
}

async fn markers(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Query(p): Query<MarkerParams>,
) -> Result<Response, ApiError> {
    let kinds = parse_kinds(&p.kinds).map_err(AaeError::BadRequest)?;
    let list = blocking(&svc, move |s| s.markers(&id, &kinds)).await?;
    Ok(Json(list).into_response())
}

#[derive(Deserialize)]
struct FrameParams {
    t: f64,
    #[serde(default = "topdown")]
    view: String,
}

fn topdown() -> String {
    "topdown".into()
}

async fn frame(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Query(p): Query<FrameParams>,
) -> Result<Response, ApiError> {
    let png = blocking(&svc, move |s| s.frame_png(&id, p.t, &p.view)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Deserialize)]
struct NewSession {
    mission_id: String,
}

async fn create_session(State(svc): State<Shared>, Json(req): Json<NewSession>) -> Result<Response, ApiError> {
    let session = blocking(&svc, move |s| s.create_session(&req.mission_id)).await?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

async fn get_session(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = blocking(&svc, move |s| {
        let handle = s.sessions.get(&id)?;
        let session = handle.lock().expect("session lock").clone();
        Ok(session)
    })
    .await?;
    Ok(Json(session).into_response())
}

#[derive(Deserialize)]
struct QueryRequest {
    text: String,
    playhead_s: f64,
}

async fn query(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<QueryRequest>,
) -> Result<Response, ApiError> {
    let answer = blocking(&svc, move |s| s.query(&id, &req.text, req.playhead_s)).await?;
    Ok(Json(answer).into_response())
}
