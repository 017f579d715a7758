//! Stateful HTTP/JSON service for interactive segmentation sessions.
//!
//! Sessions live in memory and expire after `ttl` without requests.
//! Requests to one session are serialized by a per-session lock; model
//! calls run on the blocking pool so distinct sessions proceed in parallel.

pub mod session;

use std::collections::HashMap;
use std::io::Cursor;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use image::RgbImage;
use refcut_api as api;
use refcut_core::maskops::{rle_decode, BitMask};
use refcut_core::model::RefCut;
use refcut_core::prompt::ReferenceGuidance;
use refcut_core::Error as CoreError;
use tokio::net::TcpListener;

pub use session::Session;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_sessions: usize,
    /// Largest accepted image, in pixels, for targets and references.
    pub max_pixels: u64,
    pub ttl: Duration,
    pub body_limit: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_sessions: 64,
            max_pixels: 4096 * 4096,
            ttl: Duration::from_secs(30 * 60),
            body_limit: 64 << 20,
        }
    }
}

struct Entry {
    session: Arc<tokio::sync::Mutex<Session>>,
    last_used: Instant,
}

#[derive(Clone)]
pub struct AppState {
    model: Arc<RefCut>,
    config: Arc<ServiceConfig>,
    sessions: Arc<Mutex<HashMap<String, Entry>>>,
}

impl AppState {
    pub fn new(model: Arc<RefCut>, config: ServiceConfig) -> Self {
        Self {
            model,
            config: Arc::new(config),
            sessions: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session map").len()
    }

    /// Drops sessions idle for longer than the TTL; returns how many.
    pub fn evict_expired(&self, now: Instant) -> usize {
        let ttl = self.config.ttl;
        let mut map = self.sessions.lock().expect("session map");
        let before = map.len();
        map.retain(|_, e| now.saturating_duration_since(e.last_used) < ttl);
        before - map.len()
    }

    fn lookup(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        let mut map = self.sessions.lock().expect("session map");
        let entry = map.get_mut(id).ok_or_else(|| ApiError::not_found(id))?;
        if entry.last_used.elapsed() >= self.config.ttl {
            map.remove(id);
            return Err(ApiError::not_found(id));
        }
        entry.last_used = Instant::now();
        Ok(entry.session.clone())
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
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"))
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::DimensionMismatch { .. } => "dimension_mismatch",
            CoreError::ClickOutOfBounds { .. } => "click_out_of_bounds",
            CoreError::MalformedRle(_) => "malformed_rle",
            CoreError::Config(_) => "bad_request",
            CoreError::Image(_) => "bad_image",
            _ => {
                tracing::error!(error = %e, "internal error");
                return Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string());
            }
        };
        Self::new(StatusCode::BAD_REQUEST, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(e.status(), "bad_json", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(api::ErrorResponse::new(self.code, self.message))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn check_version(v: &str) -> Result<(), ApiError> {
    if v == api::API_VERSION {
        Ok(())
    } else {
        Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "unsupported_version",
            format!("api_version {v:?} not supported, expected {:?}", api::API_VERSION),
        ))
    }
}

fn decode_image(b64: &str, max_pixels: u64) -> Result<RgbImage, ApiError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64.trim())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_image", format!("base64: {e}")))?;
    let bad = |e: image::ImageError| ApiError::new(StatusCode::BAD_REQUEST, "bad_image", e.to_string());
    let reader = image::ImageReader::new(Cursor::new(&bytes))
        .with_guessed_format()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_image", e.to_string()))?;
    let (w, h) = reader.into_dimensions().map_err(bad)?;
    if w as u64 * h as u64 > max_pixels {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "image_too_large",
            format!("image is {w}x{h}, limit is {max_pixels} pixels"),
        ));
    }
    Ok(image::load_from_memory(&bytes).map_err(bad)?.to_rgb8())
}

fn decode_mask(rle: Option<&str>) -> Result<Option<BitMask>, ApiError> {
    Ok(rle.map(rle_decode).transpose()?)
}

/// Run a model call on the blocking pool.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> refcut_core::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

async fn healthz(State(st): State<AppState>) -> Json<api::HealthResponse> {
    let c = st.model.config();
    Json(api::HealthResponse {
        api_version: api::API_VERSION.to_string(),
        status: "ok".into(),
        sessions: st.session_count() as u32,
        max_sessions: st.config.max_sessions as u32,
        model: api::ModelInfo {
            input_size: c.input_size as u32,
            patch_size: c.patch_size as u32,
            embed_dim: c.embed_dim as u32,
            depth: c.depth as u32,
        },
    })
}

async fn create_session(
    State(st): State<AppState>,
    body: Result<Json<api::CreateSessionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<api::CreateSessionResponse>), ApiError> {
    let Json(req) = body?;
    check_version(&req.api_version)?;
    let image = decode_image(&req.image_png, st.config.max_pixels)?;
    let gt = decode_mask(req.gt_rle.as_deref())?;
    let (width, height) = image.dimensions();
    let model = st.model.clone();
    let session = blocking(move || Session::new(&model, &image, gt)).await?;

    st.evict_expired(Instant::now());
    let id = uuid::Uuid::new_v4().simple().to_string();
    {
        let mut map = st.sessions.lock().expect("session map");
        if map.len() >= st.config.max_sessions {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "too_many_sessions",
                format!("session limit {} reached", st.config.max_sessions),
            ));
        }
        map.insert(
            id.clone(),
            Entry {
                session: Arc::new(tokio::sync::Mutex::new(session)),
                last_used: Instant::now(),
            },
        );
    }
    tracing::debug!(session = %id, width, height, "session created");
    Ok((
        StatusCode::CREATED,
        Json(api::CreateSessionResponse {
            api_version: api::API_VERSION.to_string(),
            session_id: id,
            width,
            height,
        }),
    ))
}

async fn set_reference(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<api::SetReferenceRequest>, JsonRejection>,
) -> ApiResult<api::SetReferenceResponse> {
    let session = st.lookup(&id)?;
    let Json(req) = body?;
    check_version(&req.api_version)?;
    let image = decode_image(&req.image_png, st.config.max_pixels)?;
    let guidance = ReferenceGuidance::new(
        image,
        decode_mask(req.positive_rle.as_deref())?,
        decode_mask(req.negative_rle.as_deref())?,
    )?;
    let label = req.label.unwrap_or_else(|| api::DEFAULT_LABEL.to_string());
    let (positive, negative) = (guidance.has_positive(), guidance.has_negative());

    let mut guard = session.lock().await;
    let model = st.model.clone();
    let prompts = blocking(move || model.generate_prompts(&guidance)).await?;
    guard.set_prompts(label.clone(), prompts);
    Ok(Json(api::SetReferenceResponse {
        api_version: api::API_VERSION.to_string(),
        label,
        positive,
        negative,
    }))
}

async fn click(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<api::ClickRequest>, JsonRejection>,
) -> ApiResult<api::MaskResponse> {
    let session = st.lookup(&id)?;
    let Json(req) = body?;
    check_version(&req.api_version)?;
    let mut guard = session.lock().await;
    let pending = guard.begin_click(
        req.row as usize,
        req.col as usize,
        session::core_polarity(req.polarity),
        req.label.as_deref(),
    )?;
    let model = st.model.clone();
    let (pending, pred) = blocking(move || {
        let pred = pending.run(&model)?;
        Ok((pending, pred))
    })
    .await?;
    guard.finish_click(pending, pred);
    Ok(Json(guard.response()?))
}

async fn undo(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<api::UndoResponse> {
    let session = st.lookup(&id)?;
    let mut guard = session.lock().await;
    let undone = guard.undo();
    Ok(Json(api::UndoResponse {
        undone,
        state: guard.response()?,
    }))
}

async fn reset(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<api::MaskResponse> {
    let session = st.lookup(&id)?;
    let mut guard = session.lock().await;
    guard.reset();
    Ok(Json(guard.response()?))
}

async fn delete_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<api::DeleteResponse> {
    let removed = st.sessions.lock().expect("session map").remove(&id);
    match removed {
        Some(_) => Ok(Json(api::DeleteResponse {
            api_version: api::API_VERSION.to_string(),
            deleted: true,
        })),
        None => Err(ApiError::not_found(&id)),
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.config.body_limit;
    Router::new()
        .route("/healthz", get(healthz))
        .route("/session", post(create_session))
        .route("/session/{id}", axum::routing::delete(delete_session))
        .route("/session/{id}/reference", post(set_reference))
        .route("/session/{id}/click", post(click))
        .route("/session/{id}/undo", post(undo))
        .route("/session/{id}/reset", post(reset))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serve until the listener fails, sweeping expired sessions in the
/// background.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    let sweeper = state.clone();
    let period = (state.config.ttl / 4).max(Duration::from_secs(1));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let n = sweeper.evict_expired(Instant::now());
            if n > 0 {
                tracing::info!(evicted = n, "expired sessions removed");
            }
        }
    });
    axum::serve(listener, router(state)).await
}

/// Bind `addr` and return the listener with its resolved address (useful
/// with port 0).
pub async fn bind(addr: SocketAddr) -> std::io::Result<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}
