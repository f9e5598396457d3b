//! REST API over a project's generated storyboards.
//!
//! Reads are served from an in-memory session loaded from `out/storyboards`.
//! Every mutation is checked against the storyboard's version token (its edit
//! count), applied, rendered to disk atomically, and only then published.

mod state;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use restory_core::aligner::{align, rank_candidates, Candidate};
use restory_core::project::{check_id, render_storyboard, write_alignment_artifacts, ProjectConfig, ProjectError};
use restory_core::similarity::Alpha;
use restory_core::storyboard::{apply_edit, assemble, ReplaceContext, StoryboardError, HTML_FILE};
use restory_core::{AlignmentConfig, CurationEdit, Storyboard, Strategy};
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

pub use state::{AlignmentEntry, Session};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("invalid project: {0}")]
    InvalidProject(#[from] ProjectError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An error response: `{"error": code, "message": text}`.
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

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} {id} not found"))
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    fn internal(err: impl std::fmt::Display) -> Self {
        tracing::error!(error = %err, "request failed");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", err.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

impl From<StoryboardError> for ApiError {
    fn from(err: StoryboardError) -> Self {
        match err {
            StoryboardError::AlreadyApproved(_) => Self::new(StatusCode::CONFLICT, "approved", err.to_string()),
            StoryboardError::InvalidTarget(_) => Self::new(StatusCode::CONFLICT, "not_editable", err.to_string()),
            StoryboardError::IndexOutOfRange { .. }
            | StoryboardError::MissingFrame(_)
            | StoryboardError::MissingMatrix
            | StoryboardError::SlotCountMismatch { .. } => Self::invalid(err.to_string()),
            _ => Self::internal(err),
        }
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

#[derive(Clone)]
pub struct AppState(Arc<Session>);

impl AppState {
    pub fn load(config: ProjectConfig, ui_dir: Option<PathBuf>) -> Result<Self, ServerError> {
        if let Some(dir) = &ui_dir {
            if !dir.is_dir() {
                return Err(ServerError::InvalidProject(ProjectError::InvalidProject(format!(
                    "ui directory {} does not exist",
                    dir.display()
                ))));
            }
        }
        Ok(Self(Arc::new(Session::load(config, ui_dir)?)))
    }

    pub fn session(&self) -> &Session {
        &self.0
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/storyboards", get(list_storyboards))
        .route("/api/storyboards/{id}", get(get_storyboard))
        .route("/api/storyboards/{id}/edits", post(submit_edit))
        .route("/api/storyboards/{id}/export", post(export))
        .route("/api/alignments/{id}", get(get_alignment))
        .route("/api/alignments/{id}/slots/{n}/candidates", get(get_candidates))
        .route("/api/alignments/{id}/recompute", post(recompute))
        .route("/media/{hash}", get(media));
    let api = match &state.0.ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") }),
    };
    api.with_state(state)
}

/// Binds the listening socket, reporting an occupied port distinctly.
pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener, ServerError> {
    tokio::net::TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServerError::PortInUse(addr.port()),
        _ => ServerError::Io(e),
    })
}

/// Serves until ctrl-c.
pub async fn run(listener: tokio::net::TcpListener, state: AppState) -> Result<(), ServerError> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

fn summary(sb: &Storyboard, has_alignment: bool) -> Value {
    json!({
        "id": sb.id,
        "kind": sb.kind,
        "status": sb.status,
        "version": sb.version(),
        "slot_count": sb.slots.len(),
        "reference_storyboard_id": sb.reference_storyboard_id,
        "input_video_id": sb.input_video_id,
        "ego_motion_policy": sb.ego_motion_policy,
        "assumption_violating": sb.violates_robot_assumption(),
        "has_alignment": has_alignment,
    })
}

fn detail(sb: &Storyboard) -> Value {
    json!({"version": sb.version(), "storyboard": sb})
}

async fn list_storyboards(State(state): State<AppState>) -> ApiResult {
    let storyboards = state.0.storyboards.read().unwrap();
    let alignments = state.0.alignments.read().unwrap();
    let items: Vec<Value> = storyboards.values().map(|sb| summary(sb, alignments.contains_key(&sb.id))).collect();
    Ok(Json(json!({"storyboards": items})))
}

async fn get_storyboard(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let storyboards = state.0.storyboards.read().unwrap();
    let sb = storyboards.get(&id).ok_or_else(|| ApiError::not_found("storyboard", &id))?;
    Ok(Json(detail(sb)))
}

fn candidate_json(entry: &AlignmentEntry, c: &Candidate) -> Value {
    let frame = entry.pool.frames.get(c.frame_index);
    json!({
        "frame_index": c.frame_index,
        "content_hash": frame.map(|f| f.content_hash.as_str()),
        "breakdown": c.breakdown,
    })
}

fn alignment_json(entry: &AlignmentEntry, storyboard: Option<&Storyboard>) -> Value {
    let frames: Vec<Value> = entry
        .pool
        .frames
        .iter()
        .zip(&entry.pool.captions)
        .map(|(f, c)| {
            json!({
                "frame_index": f.frame_index,
                "timestamp_ms": f.timestamp_ms,
                "content_hash": f.content_hash,
                "pose_caption": c.pose_caption,
                "context_caption": c.context_caption,
            })
        })
        .collect();
    json!({
        "id": entry.id,
        "alignment": entry.alignment,
        "slot_count": entry.matrix.slot_count,
        "frame_count": entry.matrix.frame_count,
        "frames": frames,
        "storyboard": storyboard.map(|sb| summary(sb, true)),
    })
}

async fn get_alignment(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let alignments = state.0.alignments.read().unwrap();
    let entry = alignments.get(&id).ok_or_else(|| ApiError::not_found("alignment", &id))?;
    let storyboards = state.0.storyboards.read().unwrap();
    Ok(Json(alignment_json(entry, storyboards.get(&id))))
}

async fn get_candidates(
    State(state): State<AppState>,
    Path((id, n)): Path<(String, String)>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult {
    let alignments = state.0.alignments.read().unwrap();
    let entry = alignments.get(&id).ok_or_else(|| ApiError::not_found("alignment", &id))?;
    let slot: usize = n.parse().map_err(|_| ApiError::invalid(format!("slot index {n:?} is not a number")))?;
    if slot >= entry.matrix.slot_count {
        return Err(ApiError::not_found("slot", &n));
    }
    let k = match query.get("k") {
        Some(k) => k.parse::<usize>().map_err(|_| ApiError::invalid(format!("k must be a positive integer, got {k:?}")))?,
        None => entry.alignment.config.top_k,
    };
    let ranked = rank_candidates(&entry.matrix, slot, k).map_err(|e| ApiError::invalid(e.to_string()))?;
    let candidates: Vec<Value> = ranked.iter().map(|c| candidate_json(entry, c)).collect();
    Ok(Json(json!({"alignment_id": id, "slot_index": slot, "k": k, "candidates": candidates})))
}

fn parse_body(body: &Bytes) -> Result<serde_json::Map<String, Value>, ApiError> {
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(ApiError::invalid("request body must be a JSON object")),
        Err(e) => Err(ApiError::invalid(format!("request body is not valid JSON: {e}"))),
    }
}

async fn recompute(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let body = if body.is_empty() { serde_json::Map::new() } else { parse_body(&body)? };
    let session = &state.0;
    let _writer = session.writer.lock().unwrap();
    let entry = session.alignments.read().unwrap().get(&id).cloned().ok_or_else(|| ApiError::not_found("alignment", &id))?;

    let mut config: AlignmentConfig = entry.alignment.config;
    if let Some(alpha) = body.get("alpha").filter(|v| !v.is_null()) {
        let value = alpha.as_f64().ok_or_else(|| ApiError::invalid("alpha must be a number"))?;
        config.alpha = Alpha::new(value).map_err(|e| ApiError::invalid(e.to_string()))?;
    }
    if let Some(strategy) = body.get("strategy").filter(|v| !v.is_null()) {
        let name = strategy.as_str().ok_or_else(|| ApiError::invalid("strategy must be a string"))?;
        config.strategy = name.parse::<Strategy>().map_err(|e| ApiError::invalid(e.to_string()))?;
    }
    if let Some(unknown) = body.keys().find(|k| *k != "alpha" && *k != "strategy") {
        return Err(ApiError::invalid(format!("unknown field {unknown}")));
    }

    let matrix = entry.matrix.with_alpha(config.alpha);
    let alignment = align(&matrix, &config).map_err(|e| ApiError::invalid(e.to_string()))?;
    let new_id = {
        let alignments = session.alignments.read().unwrap();
        let storyboards = session.storyboards.read().unwrap();
        (1..)
            .map(|n| format!("{id}-r{n}"))
            .find(|c| !alignments.contains_key(c) && !storyboards.contains_key(c))
            .expect("unbounded search")
    };
    check_id(&new_id).map_err(ApiError::internal)?;
    let next = AlignmentEntry { id: new_id.clone(), alignment, matrix, pool: entry.pool.clone() };

    let storyboard = {
        let storyboards = session.storyboards.read().unwrap();
        match storyboards.get(&next.alignment.storyboard_id) {
            Some(reference) => {
                let policy = storyboards
                    .get(&id)
                    .and_then(|sb| sb.ego_motion_policy)
                    .unwrap_or(session.config.ego_motion_policy);
                let mut sb = assemble(reference, &next.alignment, &next.pool, policy)?;
                sb.id = new_id.clone();
                Some(sb)
            }
            None => None,
        }
    };

    let dir = session.config.storyboard_dir(&new_id);
    write_alignment_artifacts(&dir, &next.alignment, &next.matrix, &next.pool).map_err(ApiError::internal)?;
    if let Some(sb) = &storyboard {
        session.persist(sb.clone()).map_err(ApiError::internal)?;
    }
    let response = alignment_json(&next, storyboard.as_ref());
    session.alignments.write().unwrap().insert(new_id, next);
    Ok(Json(response))
}

#[derive(Deserialize)]
struct EditRequest {
    #[serde(flatten)]
    edit: CurationEdit,
    version: usize,
}

async fn submit_edit(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let request: EditRequest = serde_json::from_value(Value::Object(parse_body(&body)?))
        .map_err(|e| ApiError::invalid(format!("invalid edit: {e}")))?;
    let session = &state.0;
    let _writer = session.writer.lock().unwrap();
    let current = session.storyboards.read().unwrap().get(&id).cloned().ok_or_else(|| ApiError::not_found("storyboard", &id))?;
    if request.version != current.version() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "version_conflict",
            format!("storyboard {id} is at version {}, edit was made against {}", current.version(), request.version),
        ));
    }
    let alignments = session.alignments.read().unwrap();
    let context = alignments.get(&id).map(|e| ReplaceContext { matrix: &e.matrix, pool: &e.pool });
    let next = apply_edit(&current, request.edit, context)?;
    drop(alignments);
    session.persist(next.clone()).map_err(ApiError::internal)?;
    tracing::info!(%id, version = next.version(), edit = ?request.edit, "edit applied");
    Ok(Json(detail(&next)))
}

async fn export(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let session = &state.0;
    let _writer = session.writer.lock().unwrap();
    let sb = session.storyboards.read().unwrap().get(&id).cloned().ok_or_else(|| ApiError::not_found("storyboard", &id))?;
    let manifest = render_storyboard(&session.config, &sb).map_err(ApiError::internal)?;
    let html = manifest.with_file_name(HTML_FILE);
    Ok(Json(json!({"manifest": manifest, "html": html})))
}

async fn media(State(state): State<AppState>, Path(hash): Path<String>) -> Result<Response, ApiError> {
    let path = state.0.media.read().unwrap().get(&hash).cloned().ok_or_else(|| ApiError::not_found("image", &hash))?;
    let bytes = tokio::fs::read(&path).await.map_err(|_| ApiError::not_found("image", &hash))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        _ => "image/png",
    };
    Ok(([(header::CONTENT_TYPE, mime), (header::CACHE_CONTROL, "public, max-age=31536000, immutable")], bytes).into_response())
}
