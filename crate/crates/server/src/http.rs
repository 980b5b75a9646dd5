//! JSON API over [`SessionManager`], plus static hosting of the chat UI.
//!
//! | method | path                        | body                          |
//! |--------|-----------------------------|-------------------------------|
//! | POST   | `/sessions`                 | `{condition?, topic_hint?}`   |
//! | POST   | `/sessions/{id}/utterances` | `{text}`                      |
//! | POST   | `/sessions/{id}/end`        |                               |
//! | GET    | `/sessions/{id}`            |                               |
//! | GET    | `/sessions/{id}/trace`      |                               |

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use mi_dialogue::model::Condition;

use crate::session::SessionManager;
use crate::ServiceError;

pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::SessionEnded(_) => StatusCode::CONFLICT,
            ServiceError::EmptyUtterance | ServiceError::InvalidCondition(_) => StatusCode::BAD_REQUEST,
            ServiceError::PoolNotLoaded => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Stage { .. } => StatusCode::BAD_GATEWAY,
            ServiceError::Config(_) | ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.0.kind(), "message": self.0.to_string() });
        if let ServiceError::Stage { stage, .. } = &self.0 {
            body["stage"] = json!(stage);
        }
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateRequest {
    #[serde(default)]
    pub condition: Option<String>,
    #[serde(default)]
    pub topic_hint: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct UtteranceRequest {
    pub text: String,
}

pub fn router(manager: Arc<SessionManager>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/utterances", post(post_utterance))
        .route("/sessions/{id}/end", post(end_session))
        .route("/sessions/{id}/trace", get(get_trace))
        .with_state(manager);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api.route("/", get(|| async { "mi-dialogue service: chat UI bundle not configured\n" })),
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::Storage(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

async fn create_session(
    State(m): State<Arc<SessionManager>>,
    Json(req): Json<CreateRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let condition = match req.condition.as_deref() {
        None => Condition::Ours,
        Some(c) => c
            .parse::<Condition>()
            .map_err(|_| ApiError(ServiceError::InvalidCondition(c.to_string())))?,
    };
    let view = blocking(move || m.create_session(condition, req.topic_hint)).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || m.get_session(&id)).await?))
}

async fn post_utterance(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    Json(req): Json<UtteranceRequest>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || m.post_utterance(&id, &req.text)).await?))
}

async fn end_session(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || m.end_session(&id)).await?))
}

async fn get_trace(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || m.get_trace(&id)).await?))
}
