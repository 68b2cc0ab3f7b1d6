//! Read-only HTTP API over an [`Engine`].
//!
//! `GET /health`, `GET /styles`, `POST /generate`, `POST /retrieve`. Images
//! travel as base64 PNG. The `style` field of `/generate` is either a PNG or a
//! style id; a string that does not decode to a PNG is taken as an id.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use glyphmae_core::{Charcode, GlyphImage};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

use crate::engine::{Engine, StyleChoice};
use crate::imageio::{decode_glyph, encode_png};

/// `None` until the engine has finished loading.
pub type Shared = Arc<RwLock<Option<Arc<Engine>>>>;

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    UnknownStyle(String),
    Loading,
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::UnknownStyle(s) => (StatusCode::NOT_FOUND, format!("unknown style `{s}`")),
            ApiError::Loading => (StatusCode::SERVICE_UNAVAILABLE, "model is loading".to_string()),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(ErrorBody { error })).into_response()
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<glyphmae_core::Error>() {
            Some(glyphmae_core::Error::UnknownStyle(s)) => ApiError::UnknownStyle(s.clone()),
            Some(glyphmae_core::Error::Shape(m)) => ApiError::BadRequest(m.clone()),
            _ => ApiError::Internal(format!("{e:#}")),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub content: String,
    #[serde(default)]
    pub style: Option<String>,
    #[serde(default)]
    pub style_id: Option<String>,
    #[serde(default)]
    pub use_rag: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reference_charcode: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveRequest {
    pub content: String,
    pub style_id: String,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    1
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedReference {
    pub charcode: String,
    pub distance: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub references: Vec<RankedReference>,
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

fn decode_png_field(field: &str, value: &str, size: usize) -> Result<GlyphImage, ApiError> {
    let bytes = STANDARD
        .decode(value.trim())
        .map_err(|e| ApiError::BadRequest(format!("{field}: invalid base64: {e}")))?;
    decode_glyph(&bytes, size, Charcode::MADE_UP, field).map_err(|e| ApiError::BadRequest(format!("{field}: {e:#}")))
}

fn looks_like_png(value: &str) -> bool {
    STANDARD
        .decode(value.trim())
        .map(|b| b.starts_with(PNG_SIGNATURE))
        .unwrap_or(false)
}

async fn engine(state: &Shared) -> Result<Arc<Engine>, ApiError> {
    state.read().await.clone().ok_or(ApiError::Loading)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn health() -> &'static str {
    "ok"
}

async fn styles(State(state): State<Shared>) -> Result<Json<Vec<String>>, ApiError> {
    Ok(Json(engine(&state).await?.styles()))
}

async fn generate(
    State(state): State<Shared>,
    payload: Result<Json<GenerateRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<GenerateResponse>, ApiError> {
    let Json(req) = payload.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let engine = engine(&state).await?;
    let size = engine.image_size();
    let content = decode_png_field("content", &req.content, size)?;
    let choice = match (req.style, req.style_id) {
        (Some(_), Some(_)) => return Err(ApiError::BadRequest("give either `style` or `style_id`".into())),
        (None, None) => return Err(ApiError::BadRequest("missing `style`".into())),
        (None, Some(id)) => StyleChoice::Id(id),
        (Some(s), None) if looks_like_png(&s) => StyleChoice::Image(decode_png_field("style", &s, size)?),
        (Some(s), None) => StyleChoice::Id(s),
    };
    if let StyleChoice::Id(id) = &choice {
        if !engine.styles().iter().any(|s| s == id) {
            return Err(ApiError::UnknownStyle(id.clone()));
        }
    } else if req.use_rag {
        return Err(ApiError::BadRequest("retrieval needs a style id".into()));
    }
    let use_rag = req.use_rag;
    blocking(move || {
        let out = engine.generate(&content, &choice, use_rag)?;
        let png = encode_png(&out.image)?;
        Ok(GenerateResponse {
            image: STANDARD.encode(png),
            reference_charcode: out.reference.map(|c| c.hex()),
        })
    })
    .await
    .map(Json)
}

async fn retrieve(
    State(state): State<Shared>,
    payload: Result<Json<RetrieveRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<RetrieveResponse>, ApiError> {
    let Json(req) = payload.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    if req.k == 0 {
        return Err(ApiError::BadRequest("k must be positive".into()));
    }
    let engine = engine(&state).await?;
    if !engine.indexes.contains_key(&req.style_id) {
        return Err(ApiError::UnknownStyle(req.style_id));
    }
    let content = decode_png_field("content", &req.content, engine.image_size())?;
    blocking(move || {
        let hits = engine.retrieve(&content, &req.style_id, req.k)?;
        Ok(RetrieveResponse {
            references: hits
                .into_iter()
                .map(|h| RankedReference {
                    charcode: h.charcode.hex(),
                    distance: h.distance,
                })
                .collect(),
        })
    })
    .await
    .map(Json)
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/styles", get(styles))
        .route("/generate", post(generate))
        .route("/retrieve", post(retrieve))
        .with_state(state)
}

/// Binds first and loads the engine in the background, answering 503 until
/// it is ready.
pub async fn serve(addr: SocketAddr, load: impl FnOnce() -> anyhow::Result<Engine> + Send + 'static) -> anyhow::Result<()> {
    let state: Shared = Arc::new(RwLock::new(None));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let slot = state.clone();
    let loader = tokio::task::spawn_blocking(load);
    tokio::spawn(async move {
        match loader.await {
            Ok(Ok(engine)) => {
                log::info!("model {} ready", engine.checkpoint_id);
                *slot.write().await = Some(Arc::new(engine));
            }
            Ok(Err(e)) => log::error!("loading failed: {e:#}"),
            Err(e) => log::error!("loader panicked: {e}"),
        }
    });
    axum::serve(listener, router(state)).await?;
    Ok(())
}
