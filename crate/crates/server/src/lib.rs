//! HTTP and WebSocket API over one [`EditSession`].
//!
//! Edits go through a single writer lock and bump the revision by one each.
//! Renders and exports read an immutable snapshot, either the latest or a
//! recently retained revision named in the request. Binary frames are
//! encoded with [`morphield::surfacing::encode_frame`].

mod error;
mod frames;

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{FromRequest, FromRequestParts, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use morphield::critical::{CriticalPoint, SearchStats};
use morphield::deformer::{CompositeField, Deformer, DeformerParams};
use morphield::mesh::NormalizationTransform;
use morphield::session::{EditCommand, EditOutcome, EditSession, FitSummary, SourceInfo, Timings, FORMAT_VERSION};
use morphield::surfacing::{render, RenderParams, RenderedFrame, MIN_RESOLUTION};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

pub use error::ApiError;
pub use morphield::surfacing::{decode_frame_header, encode_frame, FrameHeader, FLAG_DEPTH, FRAME_HEADER_LEN, FRAME_MAGIC};

/// Revisions kept for renders that name an older revision.
pub const SNAPSHOT_RETENTION: usize = 32;
pub const DEFAULT_EXPORT_RES: usize = 128;
pub const MAX_EXPORT_RES: usize = 512;
pub const REVISION_HEADER: &str = "x-morphield-revision";
pub const RENDER_MS_HEADER: &str = "x-morphield-render-ms";

struct Inner {
    session: EditSession,
    snapshots: VecDeque<(u64, Arc<CompositeField>)>,
}

struct Shared {
    inner: Mutex<Inner>,
    path: Mutex<Option<PathBuf>>,
    revisions: watch::Sender<u64>,
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    /// `path` is where `POST /v1/session/save` writes when the request names no path.
    pub fn new(session: EditSession, path: Option<PathBuf>) -> Self {
        let rev = session.revision();
        let snapshots = VecDeque::from([session.snapshot()]);
        AppState {
            shared: Arc::new(Shared {
                inner: Mutex::new(Inner { session, snapshots }),
                path: Mutex::new(path),
                revisions: watch::Sender::new(rev),
            }),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // A panic inside an edit never leaves the session half-updated, so a poisoned lock is still consistent.
        self.shared.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn revision(&self) -> u64 {
        self.lock().session.revision()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.shared.revisions.subscribe()
    }

    /// Latest snapshot, or the one for `revision` if still retained.
    pub fn snapshot(&self, revision: Option<u64>) -> Result<(u64, Arc<CompositeField>), ApiError> {
        let inner = self.lock();
        match revision {
            None => Ok(inner.session.snapshot()),
            Some(r) => inner
                .snapshots
                .iter()
                .find(|(rev, _)| *rev == r)
                .cloned()
                .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "revision_unavailable", format!("revision {r} is not retained"))),
        }
    }

    /// Runs one edit on the blocking pool under the writer lock.
    pub async fn edit<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        F: FnOnce(&mut EditSession) -> morphield::Result<T> + Send + 'static,
        T: Send + 'static,
    {
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let mut inner = state.lock();
            let before = inner.session.revision();
            let out = f(&mut inner.session)?;
            let after = inner.session.revision();
            if after != before {
                let snap = inner.session.snapshot();
                if inner.snapshots.len() == SNAPSHOT_RETENTION {
                    inner.snapshots.pop_front();
                }
                inner.snapshots.push_back(snap);
                drop(inner);
                state.shared.revisions.send_replace(after);
            }
            Ok(out)
        })
        .await
        .map_err(ApiError::internal)?
    }

    fn read<T>(&self, f: impl FnOnce(&EditSession) -> T) -> T {
        f(&self.lock().session)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/meta", get(meta))
        .route("/v1/saddles", get(saddles))
        .route("/v1/deformers", get(list_deformers).post(add_deformer))
        .route("/v1/deformers/{id}", patch(retune_deformer).delete(remove_deformer))
        .route("/v1/undo", post(undo))
        .route("/v1/render", post(render_frame))
        .route("/v1/export", get(export))
        .route("/v1/session/save", post(save))
        .route("/v1/frames", get(frames::frames))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(state)
}

/// Binds and serves until the process is stopped. Fails if the address is taken.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
struct ApiJson<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Path), rejection(ApiError))]
struct ApiPath<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
struct ApiQuery<T>(T);

#[derive(Debug, Serialize, Deserialize)]
pub struct Meta {
    pub format_version: u32,
    pub revision: u64,
    pub n: usize,
    pub spacing: f64,
    pub source: SourceInfo,
    pub margin: f64,
    pub transform: NormalizationTransform,
    pub fit: FitSummary,
    pub search: SearchStats,
    pub timings: Timings,
    pub params: DeformerParams,
    pub saddle_count: usize,
    pub deformer_count: usize,
    pub undo_depth: usize,
}

async fn meta(State(state): State<AppState>) -> Json<Meta> {
    Json(state.read(|s| Meta {
        format_version: FORMAT_VERSION,
        revision: s.revision(),
        n: s.spec().cells(),
        spacing: s.spec().spacing(),
        source: s.source.clone(),
        margin: s.margin,
        transform: s.transform,
        fit: s.fit,
        search: s.search,
        timings: s.timings,
        params: s.params,
        saddle_count: s.saddles().len(),
        deformer_count: s.deformers().len(),
        undo_depth: s.history_len(),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaddleEntry {
    pub id: usize,
    #[serde(flatten)]
    pub point: CriticalPoint,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SaddleList {
    pub revision: u64,
    pub saddles: Vec<SaddleEntry>,
}

async fn saddles(State(state): State<AppState>) -> Json<SaddleList> {
    Json(state.read(|s| SaddleList {
        revision: s.revision(),
        saddles: s
            .saddles()
            .iter()
            .enumerate()
            .map(|(id, cp)| SaddleEntry { id, point: cp.clone() })
            .collect(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DeformerList {
    pub revision: u64,
    pub deformers: Vec<Deformer>,
}

async fn list_deformers(State(state): State<AppState>) -> Json<DeformerList> {
    Json(state.read(|s| DeformerList {
        revision: s.revision(),
        deformers: s.deformers().to_vec(),
    }))
}

/// Response to every edit. `current` is null once the deformer no longer exists.
#[derive(Debug, Serialize, Deserialize)]
pub struct EditResponse {
    #[serde(flatten)]
    pub outcome: EditOutcome,
    pub current: Option<Deformer>,
}

fn edit_response(s: &EditSession, outcome: EditOutcome) -> EditResponse {
    let current = s.composite().get(outcome.deformer).cloned();
    EditResponse { outcome, current }
}

async fn add_deformer(State(state): State<AppState>, ApiJson(cmd): ApiJson<EditCommand>) -> Result<impl IntoResponse, ApiError> {
    if !matches!(cmd, EditCommand::AddTopologyDeformer { .. } | EditCommand::AddGeometryDeformer { .. }) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_argument",
            "POST /v1/deformers takes add_topology_deformer or add_geometry_deformer",
        ));
    }
    let resp = state.edit(move |s| s.apply(&cmd).map(|o| edit_response(s, o))).await?;
    Ok((StatusCode::CREATED, Json(resp)))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetuneBody {
    pub mu: Option<f64>,
    pub phi: Option<f64>,
    pub rho: Option<f64>,
    pub radius: Option<f64>,
    pub amplitude: Option<f64>,
}

async fn retune_deformer(
    State(state): State<AppState>,
    ApiPath(id): ApiPath<u64>,
    ApiJson(body): ApiJson<RetuneBody>,
) -> Result<Json<EditResponse>, ApiError> {
    let cmd = EditCommand::Retune {
        id,
        mu: body.mu,
        phi: body.phi,
        rho: body.rho,
        radius: body.radius,
        amplitude: body.amplitude,
    };
    Ok(Json(state.edit(move |s| s.apply(&cmd).map(|o| edit_response(s, o))).await?))
}

async fn remove_deformer(State(state): State<AppState>, ApiPath(id): ApiPath<u64>) -> Result<Json<EditResponse>, ApiError> {
    let cmd = EditCommand::Remove { id };
    Ok(Json(state.edit(move |s| s.apply(&cmd).map(|o| edit_response(s, o))).await?))
}

async fn undo(State(state): State<AppState>) -> Result<Json<EditResponse>, ApiError> {
    Ok(Json(state.edit(|s| s.undo().map(|o| edit_response(s, o))).await?))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFormat {
    #[default]
    Png,
    Frame,
}

/// Body of `POST /v1/render` and of each `/v1/frames` request message.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RenderRequest {
    #[serde(flatten)]
    pub params: RenderParams,
    /// Render this retained revision instead of the latest.
    #[serde(default)]
    pub revision: Option<u64>,
    #[serde(default)]
    pub format: FrameFormat,
    /// Append the depth channel to binary frames.
    #[serde(default)]
    pub depth: bool,
    /// Echoed in the frame header so clients can drop stale frames.
    #[serde(default)]
    pub seq: u32,
}

async fn render_snapshot(state: &AppState, req: &RenderRequest) -> Result<(u64, RenderedFrame), ApiError> {
    req.params.validate()?;
    let (rev, field) = state.snapshot(req.revision)?;
    let params = req.params;
    let frame = tokio::task::spawn_blocking(move || render(&*field, &params))
        .await
        .map_err(ApiError::internal)??;
    Ok((rev, frame))
}

async fn render_frame(State(state): State<AppState>, ApiJson(req): ApiJson<RenderRequest>) -> Result<Response, ApiError> {
    let (rev, frame) = render_snapshot(&state, &req).await?;
    let mut headers = HeaderMap::new();
    headers.insert(REVISION_HEADER, HeaderValue::from(rev));
    headers.insert(RENDER_MS_HEADER, HeaderValue::from_str(&format!("{:.3}", frame.millis)).unwrap());
    let (ty, body) = match req.format {
        FrameFormat::Png => ("image/png", frame.encode_png()?),
        FrameFormat::Frame => ("application/octet-stream", encode_frame(&frame, rev, req.seq, req.depth)),
    };
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static(ty));
    Ok((headers, body).into_response())
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    res: Option<usize>,
    revision: Option<u64>,
}

async fn export(State(state): State<AppState>, ApiQuery(q): ApiQuery<ExportQuery>) -> Result<Response, ApiError> {
    let res = q.res.unwrap_or(DEFAULT_EXPORT_RES);
    if !(MIN_RESOLUTION..=MAX_EXPORT_RES).contains(&res) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_argument",
            format!("res must be within {MIN_RESOLUTION}..={MAX_EXPORT_RES}"),
        ));
    }
    let (rev, field) = state.snapshot(q.revision)?;
    let transform = state.read(|s| s.transform);
    let obj = tokio::task::spawn_blocking(move || {
        morphield::surfacing::marching_cubes(&*field, res).map(|m| m.to_obj_string(Some(&transform)))
    })
    .await
    .map_err(ApiError::internal)??;
    let mut headers = HeaderMap::new();
    headers.insert(REVISION_HEADER, HeaderValue::from(rev));
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("model/obj"));
    Ok((headers, obj).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SaveBody {
    path: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SaveResponse {
    pub path: PathBuf,
    pub revision: u64,
}

async fn save(State(state): State<AppState>, body: axum::body::Bytes) -> Result<Json<SaveResponse>, ApiError> {
    let requested = if body.iter().all(u8::is_ascii_whitespace) {
        None
    } else {
        serde_json::from_slice::<SaveBody>(&body)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", e.to_string()))?
            .path
    };
    let path = match requested.or_else(|| state.shared.path.lock().unwrap().clone()) {
        Some(p) => p,
        None => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_argument",
                "no session path configured; pass {\"path\": ...}",
            ))
        }
    };
    let target = path.clone();
    let revision = state.edit(move |s| s.save(&target).map(|_| s.revision())).await?;
    *state.shared.path.lock().unwrap() = Some(path.clone());
    Ok(Json(SaveResponse { path, revision }))
}
