//! Local HTTP service for threshold-calibration labeling.
//!
//! Every mutation is appended to `labels.jsonl` and fsynced before the
//! response is sent, so an acknowledged label survives a crash. On start the
//! log is replayed to rebuild the session.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use forge_core::analysis::{threshold_sweep, PrecisionCurve, SWEEP_HI, SWEEP_LO, SWEEP_STEP};
use forge_core::label::{LabelSession, LogEvent, PairCard, SampleSpec, SessionStats};
use forge_core::{KnnGraph, ObjectRecord};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::{fsutil, images};

pub const DEFAULT_PORT: u16 = 7341;

/// Append-only, fsynced JSONL event log.
pub struct LabelLog {
    path: PathBuf,
    file: File,
}

impl LabelLog {
    /// Reads every complete event in the log. A final line without a
    /// trailing newline was never acknowledged and is ignored.
    pub fn read_events(path: &Path) -> Result<Vec<LogEvent>> {
        let text = fsutil::read_to_string(path)?;
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        if complete.len() < text.len() {
            log::warn!("{}: ignoring unterminated final line", path.display());
        }
        complete
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| ForgeError::corrupt(path, format!("line {}: {}", i + 1, e)))
            })
            .collect()
    }

    fn open_append(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fsutil::create_dir_all(parent)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ForgeError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, event: &LogEvent) -> Result<()> {
        let mut line = serde_json::to_vec(event).map_err(|e| ForgeError::Internal(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| ForgeError::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| ForgeError::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Resolves object ids to crops of their source images.
#[derive(Debug, Clone, Default)]
pub struct CropSource {
    root: PathBuf,
    records: HashMap<u64, ObjectRecord>,
}

impl CropSource {
    pub fn new(root: impl Into<PathBuf>, records: &[ObjectRecord]) -> Self {
        Self {
            root: root.into(),
            records: records.iter().map(|r| (r.id, r.clone())).collect(),
        }
    }

    pub fn crop_png(&self, id: u64) -> Result<Vec<u8>> {
        let r = self
            .records
            .get(&id)
            .ok_or_else(|| ForgeError::validation(format!("no object record for id {}", id)))?;
        let img = images::load_rgb(&self.root.join(&r.image))?;
        let crop = img.crop(r.bbox)?;
        images::encode_png(&crop)
    }
}

pub struct Service {
    session: LabelSession,
    log: LabelLog,
    crops: Option<CropSource>,
    static_dir: Option<PathBuf>,
}

impl Service {
    /// Replays `log_path` if it holds events, otherwise samples a new session
    /// from `graph` and writes its header.
    pub fn open(log_path: &Path, session_id: &str, graph: &KnnGraph, spec: SampleSpec) -> Result<Self> {
        let existing = if log_path.exists() {
            Self::read_existing(log_path)?
        } else {
            None
        };
        let mut log = LabelLog::open_append(log_path)?;
        let session = match existing {
            Some(s) => {
                if s.id() != session_id {
                    return Err(ForgeError::validation(format!(
                        "{} holds session {}, not {}",
                        log_path.display(),
                        s.id(),
                        session_id
                    )));
                }
                log::info!("replayed session {}: {} of {} labeled", s.id(), s.labels().len(), s.pairs().len());
                s
            }
            None => {
                let (s, header) = LabelSession::create(session_id, graph, spec)?;
                log.append(&header)?;
                log::info!("created session {} with {} pairs", s.id(), s.pairs().len());
                s
            }
        };
        Ok(Self {
            session,
            log,
            crops: None,
            static_dir: None,
        })
    }

    /// Rebuilds the session recorded in an existing log.
    pub fn resume(log_path: &Path) -> Result<Self> {
        let session = Self::read_existing(log_path)?
            .ok_or_else(|| ForgeError::validation(format!("{} holds no session", log_path.display())))?;
        Ok(Self {
            session,
            log: LabelLog::open_append(log_path)?,
            crops: None,
            static_dir: None,
        })
    }

    fn read_existing(log_path: &Path) -> Result<Option<LabelSession>> {
        let events = LabelLog::read_events(log_path)?;
        if events.is_empty() {
            return Ok(None);
        }
        LabelSession::replay(events)
            .map(Some)
            .map_err(|e| ForgeError::corrupt(log_path, e.to_string()))
    }

    pub fn with_crops(mut self, crops: CropSource) -> Self {
        self.crops = Some(crops);
        self
    }

    pub fn with_static_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.static_dir = Some(dir.into());
        self
    }

    pub fn session(&self) -> &LabelSession {
        &self.session
    }

    pub fn submit(&mut self, pair_id: &str, is_match: bool) -> std::result::Result<SessionStats, ApiError> {
        let mut probe = self.session.clone();
        let event = probe.submit(pair_id, is_match).map_err(ApiError::from_core)?;
        self.log.append(&event).map_err(ApiError::internal)?;
        self.session = probe;
        Ok(self.session.stats())
    }

    pub fn set_threshold(&mut self, value: f32) -> std::result::Result<SessionStats, ApiError> {
        let mut probe = self.session.clone();
        let event = probe.set_threshold(value).map_err(ApiError::from_core)?;
        self.log.append(&event).map_err(ApiError::internal)?;
        self.session = probe;
        Ok(self.session.stats())
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn from_core(e: forge_core::Error) -> Self {
        let status = match e {
            forge_core::Error::AlreadyLabeled(_) => StatusCode::CONFLICT,
            forge_core::Error::UnknownPair(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }

    fn internal(e: ForgeError) -> Self {
        log::error!("{}", e);
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type Shared = Arc<Mutex<Service>>;
type ApiResult<T> = std::result::Result<T, ApiError>;

fn lock(state: &Shared) -> std::sync::MutexGuard<'_, Service> {
    state.lock().unwrap_or_else(|e| e.into_inner())
}

fn check_session(svc: &Service, id: &str) -> ApiResult<()> {
    if svc.session.id() != id {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {}", id)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NextResponse {
    Pair(PairCard),
    Done { done: bool },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRequest {
    pub pair_id: String,
    #[serde(rename = "match")]
    pub is_match: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdRequest {
    pub value: f32,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct PrecisionQuery {
    pub step: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

async fn next_pair(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<NextResponse>> {
    let mut svc = lock(&state);
    check_session(&svc, &id)?;
    Ok(Json(match svc.session.next_pair() {
        Some(p) => NextResponse::Pair(p.clone()),
        None => NextResponse::Done { done: true },
    }))
}

async fn submit_label(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<LabelRequest>,
) -> ApiResult<Json<SessionStats>> {
    let mut svc = lock(&state);
    check_session(&svc, &id)?;
    svc.submit(&req.pair_id, req.is_match).map(Json)
}

async fn precision(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<PrecisionQuery>,
) -> ApiResult<Json<PrecisionCurve>> {
    let svc = lock(&state);
    check_session(&svc, &id)?;
    let grid = threshold_sweep(
        q.lo.unwrap_or(SWEEP_LO),
        q.hi.unwrap_or(SWEEP_HI),
        q.step.unwrap_or(SWEEP_STEP),
    )
    .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    svc.session.live_precision(&grid).map(Json).map_err(ApiError::from_core)
}

async fn set_threshold(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<ThresholdRequest>,
) -> ApiResult<Json<SessionStats>> {
    let mut svc = lock(&state);
    check_session(&svc, &id)?;
    svc.set_threshold(req.value).map(Json)
}

async fn stats(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionStats>> {
    let svc = lock(&state);
    check_session(&svc, &id)?;
    Ok(Json(svc.session.stats()))
}

/// Completed labels as JSONL, readable by `forge analyze precision`.
async fn export(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let svc = lock(&state);
    check_session(&svc, &id)?;
    let mut body = String::new();
    for l in svc.session.labels() {
        body.push_str(&serde_json::to_string(l).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?);
        body.push('\n');
    }
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-ndjson"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"labels.jsonl\""),
        ],
        body,
    )
        .into_response())
}

async fn crop(State(state): State<Shared>, UrlPath((pair_id, file)): UrlPath<(String, String)>) -> ApiResult<Response> {
    let svc = lock(&state);
    let pair = svc
        .session
        .pair(&pair_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown pair {}", pair_id)))?;
    let id = match file.as_str() {
        "a.png" => pair.a,
        "b.png" => pair.b,
        _ => return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no crop {}", file))),
    };
    let crops = svc
        .crops
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "service has no corpus for crops"))?;
    let png = crops.crop_png(id).map_err(|e| ApiError::new(StatusCode::NOT_FOUND, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

const INDEX_HTML: &str = include_str!("index.html");

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("png") => "image/png",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

async fn static_asset(State(state): State<Shared>, uri: axum::http::Uri) -> Response {
    let dir = lock(&state).static_dir.clone();
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let Some(dir) = dir else {
        return if rel == "index.html" {
            Html(INDEX_HTML).into_response()
        } else {
            StatusCode::NOT_FOUND.into_response()
        };
    };
    let rel_path = Path::new(rel);
    if rel_path.components().any(|c| !matches!(c, Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let full = dir.join(rel_path);
    match std::fs::read(&full) {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&full))], Body::from(bytes)).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

pub fn router(service: Service) -> Router {
    let state: Shared = Arc::new(Mutex::new(service));
    Router::new()
        .route("/api/session/{id}/next", get(next_pair))
        .route("/api/session/{id}/label", post(submit_label))
        .route("/api/session/{id}/precision", get(precision))
        .route("/api/session/{id}/threshold", post(set_threshold))
        .route("/api/session/{id}/stats", get(stats))
        .route("/api/session/{id}/export", get(export))
        .route("/crops/{pair_id}/{file}", get(crop))
        .fallback(static_asset)
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(service: Service, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ForgeError::io(addr.to_string(), e))?;
    log::info!("label service listening on http://{}", addr);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ForgeError::io(addr.to_string(), e))
}
