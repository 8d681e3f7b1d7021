//! JSON-over-HTTP front end to [`SessionService`]. One mutex guards every
//! session, so each session has a single writer.

use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use xmod_core::harness::{CreateSession, HarnessError, ResponseSubmission, SessionService};

pub type SharedService = Arc<Mutex<SessionService>>;

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

pub struct ApiError(HarnessError);

impl From<HarnessError> for ApiError {
    fn from(e: HarnessError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            HarnessError::NotFound(_) => StatusCode::NOT_FOUND,
            HarnessError::Conflict(_) => StatusCode::CONFLICT,
            HarnessError::BadRequest(_) | HarnessError::Protocol(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.0.to_string() })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn lock(s: &SharedService) -> MutexGuard<'_, SessionService> {
    // A panic mid-request leaves no half-applied state: every service method
    // validates before mutating.
    s.lock().unwrap_or_else(|p| p.into_inner())
}

async fn create(State(s): State<SharedService>, Json(req): Json<CreateSession>) -> ApiResult<impl IntoResponse> {
    let created = lock(&s).create(&req)?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn next(State(s): State<SharedService>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(lock(&s).next_trial(&id)?))
}

async fn respond(
    State(s): State<SharedService>,
    Path(id): Path<String>,
    Json(sub): Json<ResponseSubmission>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(lock(&s).submit(&id, &sub)?))
}

async fn advance(State(s): State<SharedService>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(lock(&s).advance(&id)?))
}

async fn status(State(s): State<SharedService>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(lock(&s).status(&id)?))
}

async fn export(State(s): State<SharedService>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let csv = lock(&s).export_csv(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv))
}

async fn audio(State(s): State<SharedService>, Path((id, trial)): Path<(String, u32)>) -> ApiResult<impl IntoResponse> {
    // Rendering takes a few milliseconds; fine to hold the lock.
    let wav = lock(&s).audio_wav(&id, trial)?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], wav))
}

pub fn router(service: SharedService) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(status))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/responses", post(respond))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/trials/{trial_id}/audio.wav", get(audio))
        .with_state(service)
}

/// Serves until ctrl-c.
pub async fn serve(service: SessionService, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(Mutex::new(service))))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
