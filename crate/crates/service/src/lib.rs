//! Session-oriented HTTP API for dialogs where a person plays A-BOT: Q-BOT
//! asks ten questions, the person answers, Q-BOT describes the video.
//!
//! ```text
//! POST /sessions              {video_id | toy_seed, mode?}  -> {session_id, status, round, question, frames?}
//! POST /sessions/{id}/answer  {text}                        -> {session_id, status, round, question}
//!                                                              | {session_id, status, description, transcript}
//! GET  /sessions/{id}                                       -> session view
//! GET  /healthz                                             -> {status}
//! ```

mod error;
pub mod headless;
mod session;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use qacoop_core::dialog::Transcript;
use qacoop_core::model::DialogMode;
use serde::{Deserialize, Serialize};

pub use error::ApiError;
pub use session::{Advance, Deployment, Fault, Service, ServiceConfig, Session, SessionStatus, SessionView, VideoRef};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub video_id: Option<String>,
    pub toy_seed: Option<u64>,
    pub mode: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub status: SessionStatus,
    pub round: usize,
    pub question: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
pub struct AnswerRequest {
    pub text: String,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum AnswerResponse {
    Next { session_id: String, status: SessionStatus, round: usize, question: String },
    Done { session_id: String, status: SessionStatus, description: String, transcript: Box<Transcript> },
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(view))
        .route("/sessions/{id}/answer", post(answer))
        .with_state(service)
}

async fn healthz(State(service): State<Arc<Service>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "sessions": service.session_count() }))
}

fn body<T>(req: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    req.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn create(State(service): State<Arc<Service>>, req: Result<Json<CreateRequest>, JsonRejection>) -> Result<Json<CreateResponse>, ApiError> {
    let req = body(req)?;
    let video = match (req.video_id, req.toy_seed) {
        (Some(id), None) => VideoRef::Id(id),
        (None, Some(seed)) => VideoRef::ToySeed(seed),
        _ => return Err(ApiError::bad_request("give exactly one of `video_id` and `toy_seed`")),
    };
    let mode = req.mode.as_deref().map(str::parse::<DialogMode>).transpose()?;
    let (view, frames) = service.create(video, mode).await?;
    Ok(Json(CreateResponse {
        session_id: view.session_id,
        status: view.status,
        round: view.round,
        question: view.question.unwrap_or_default(),
        frames,
    }))
}

async fn view(State(service): State<Arc<Service>>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(service.view(&id).await?))
}

async fn answer(
    State(service): State<Arc<Service>>,
    Path(id): Path<String>,
    req: Result<Json<AnswerRequest>, JsonRejection>,
) -> Result<Json<AnswerResponse>, ApiError> {
    let req = body(req)?;
    let out = match service.answer(&id, req.text).await? {
        Advance::Next { round, question } => AnswerResponse::Next { session_id: id, status: SessionStatus::AwaitingAnswer, round, question },
        Advance::Done { description, transcript } => {
            AnswerResponse::Done { session_id: id, status: SessionStatus::Complete, description, transcript: Box::new(transcript) }
        }
    };
    Ok(Json(out))
}

/// Periodically expires idle sessions.
pub fn spawn_collector(service: Arc<Service>, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            let n = service.collect_idle();
            if n > 0 {
                log::info!("expired {n} idle sessions");
            }
        }
    })
}

pub async fn serve(service: Arc<Service>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let collector = spawn_collector(service.clone(), Duration::from_secs(60));
    let result = axum::serve(listener, router(service)).await;
    collector.abort();
    result
}
