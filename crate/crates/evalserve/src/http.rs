//! JSON routes over [`EvalService`].

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::error::ServiceError;
use crate::model::{RatingSubmission, TestConfig};
use crate::service::EvalService;

type Shared = State<Arc<EvalService>>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let kind = match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Invalid(_) => "invalid",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Storage(_) => "storage",
        };
        (
            status,
            Json(serde_json::json!({ "error": kind, "detail": self.to_string() })),
        )
            .into_response()
    }
}

#[derive(Debug, Deserialize)]
struct SessionRequest {
    test_id: String,
    #[serde(default)]
    qualification: Option<String>,
}

async fn create_test(State(svc): Shared, Json(config): Json<TestConfig>) -> Result<Response, ServiceError> {
    let summary = svc.create_test(config)?;
    let status = if summary.created {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(summary)).into_response())
}

async fn get_test(State(svc): Shared, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(svc.summary(&id)?).into_response())
}

async fn open_session(State(svc): Shared, Json(req): Json<SessionRequest>) -> Result<Response, ServiceError> {
    Ok((
        StatusCode::CREATED,
        Json(svc.open_session(&req.test_id, req.qualification)?),
    )
        .into_response())
}

async fn next_panel(State(svc): Shared, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(svc.next_panel(&id)?).into_response())
}

async fn submit(
    State(svc): Shared,
    Path((id, panel)): Path<(String, String)>,
    Json(sub): Json<RatingSubmission>,
) -> Result<Response, ServiceError> {
    Ok(Json(svc.submit(&id, &panel, sub)?).into_response())
}

async fn export(State(svc): Shared, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let csv = svc.export_csv(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

async fn audio(
    State(svc): Shared,
    Path((test, panel, file)): Path<(String, String, String)>,
) -> Result<Response, ServiceError> {
    let path = svc.audio_path(&test, &panel, &file)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ServiceError::NotFound(format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

pub fn router(service: Arc<EvalService>) -> Router {
    Router::new()
        .route("/tests", post(create_test))
        .route("/tests/{id}", get(get_test))
        .route("/tests/{id}/export", get(export))
        .route("/sessions", post(open_session))
        .route("/sessions/{id}/next", get(next_panel))
        .route("/sessions/{id}/panels/{pid}/ratings", post(submit))
        .route("/audio/{test}/{panel}/{file}", get(audio))
        .with_state(service)
}

pub async fn serve(listener: tokio::net::TcpListener, service: Arc<EvalService>) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}
