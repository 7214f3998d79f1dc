//! HTTP classification service.
//!
//! Clients POST raw JPEG or PNG bytes to `/v1/classify` and receive class probabilities.
//! One immutable model bundle is shared by all requests; the only mutable state is a
//! request counter.

mod config;
mod error;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Body;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use http_body_util::{BodyExt, LengthLimitError, Limited};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use ycd_core::data::{preprocess_bytes, DataError};
use ycd_core::model::{forward, load_bundle, BundleError, ModelBundle, ModelError};
use ycd_core::nnops::count_costs;

pub use config::{ConfigError, ServiceConfig, DEFAULT_ADDR, DEFAULT_MAX_BODY_BYTES, MIN_MAX_BODY_BYTES};
pub use error::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub probability: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub predictions: Vec<Prediction>,
    /// Decode, preprocess, and forward time; network time is not included.
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub params: u64,
    pub macs: u64,
    pub input_resolution: usize,
    pub format_version: u32,
}

impl ModelInfo {
    /// Costs of the full network, backbone plus dense head.
    pub fn of(bundle: &ModelBundle) -> Self {
        let arch = bundle.arch().with_head(bundle.labels().len());
        let resolution = arch.effective_resolution();
        let costs = count_costs(&arch, resolution);
        Self {
            params: costs.total_params,
            macs: costs.total_macs,
            input_resolution: resolution,
            format_version: bundle.format_version(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub ready: bool,
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("loading model {}: {source}", path.display())]
    Model { path: PathBuf, source: BundleError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct LoadedModel {
    bundle: ModelBundle,
    info: ModelInfo,
}

struct Inner {
    model: Option<LoadedModel>,
    top_k: Option<usize>,
    max_body_bytes: usize,
    requests: AtomicU64,
}

/// Shared, read-only service state.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(model: Option<ModelBundle>, top_k: Option<usize>, max_body_bytes: usize) -> Self {
        let model = model.map(|bundle| LoadedModel {
            info: ModelInfo::of(&bundle),
            bundle,
        });
        Self(Arc::new(Inner {
            model,
            top_k,
            max_body_bytes,
            requests: AtomicU64::new(0),
        }))
    }

    /// Validates `cfg` and loads its model bundle, if one is configured.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, ServeError> {
        cfg.validate()?;
        let model = match &cfg.model_path {
            Some(path) => Some(load_bundle(path).map_err(|source| ServeError::Model {
                path: path.clone(),
                source,
            })?),
            None => None,
        };
        Ok(Self::new(model, cfg.top_k, cfg.max_body_bytes))
    }

    pub fn is_ready(&self) -> bool {
        self.0.model.is_some()
    }

    pub fn bundle(&self) -> Option<&ModelBundle> {
        self.0.model.as_ref().map(|m| &m.bundle)
    }

    /// Number of classification requests received so far.
    pub fn request_count(&self) -> u64 {
        self.0.requests.load(Ordering::Relaxed)
    }

    fn model(&self) -> Result<&LoadedModel, ApiError> {
        self.0.model.as_ref().ok_or_else(ApiError::model_not_loaded)
    }
}

/// All classes sorted by descending probability (ties keep class order), truncated to `top_k`.
pub fn classify_bytes(bundle: &ModelBundle, bytes: &[u8], top_k: Option<usize>) -> Result<Vec<Prediction>, ApiError> {
    let resolution = bundle.arch().effective_resolution();
    let image = preprocess_bytes(bytes, resolution).map_err(|e| match e {
        DataError::Decode(_) | DataError::EmptyImage => {
            ApiError::new(StatusCode::BAD_REQUEST, "undecodable_image", e.to_string())
        }
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
    })?;
    let out = forward(bundle, &image).map_err(|e: ModelError| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "inference_failed", e.to_string())
    })?;
    let mut order: Vec<usize> = (0..out.probs.len()).collect();
    order.sort_by(|&a, &b| out.probs[b].total_cmp(&out.probs[a]));
    order.truncate(top_k.unwrap_or(usize::MAX));
    Ok(order
        .into_iter()
        .map(|i| Prediction {
            label: bundle.labels()[i].clone(),
            probability: out.probs[i],
        })
        .collect())
}

fn media_type(headers: &HeaderMap) -> Option<String> {
    let raw = headers.get(header::CONTENT_TYPE)?.to_str().ok()?;
    Some(raw.split(';').next().unwrap_or("").trim().to_ascii_lowercase())
}

fn too_large(limit: usize) -> ApiError {
    ApiError::new(
        StatusCode::BAD_REQUEST,
        "body_too_large",
        format!("request body exceeds {limit} bytes"),
    )
}

async fn classify(State(state): State<AppState>, headers: HeaderMap, body: Body) -> Result<Json<ClassifyResponse>, ApiError> {
    state.0.requests.fetch_add(1, Ordering::Relaxed);
    let mime = media_type(&headers);
    if !matches!(mime.as_deref(), Some("image/jpeg" | "image/png")) {
        return Err(ApiError::unsupported_media_type(
            headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()),
        ));
    }
    state.model()?;

    let limit = state.0.max_body_bytes;
    let declared = headers
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok());
    if declared.is_some_and(|n| n > limit as u64) {
        return Err(too_large(limit));
    }
    let bytes = match Limited::new(body, limit).collect().await {
        Ok(collected) => collected.to_bytes(),
        Err(e) if e.downcast_ref::<LengthLimitError>().is_some() => return Err(too_large(limit)),
        Err(e) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "body_read_failed", e.to_string())),
    };
    if bytes.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty_body", "request body is empty"));
    }

    let top_k = state.0.top_k;
    let worker = state.clone();
    let (predictions, latency_ms) = tokio::task::spawn_blocking(move || {
        let start = Instant::now();
        let bundle = &worker.model()?.bundle;
        let predictions = classify_bytes(bundle, &bytes, top_k)?;
        Ok::<_, ApiError>((predictions, start.elapsed().as_secs_f64() * 1e3))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(ClassifyResponse {
        predictions,
        latency_ms,
    }))
}

async fn labels(State(state): State<AppState>) -> Result<Json<serde_json::Value>, ApiError> {
    let m = state.model()?;
    Ok(Json(serde_json::json!({ "labels": m.bundle.labels() })))
}

async fn info(State(state): State<AppState>) -> Result<Json<ModelInfo>, ApiError> {
    Ok(Json(state.model()?.info))
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        ready: state.is_ready(),
    })
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this endpoint")
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    if origins.iter().any(|o| o == "*") {
        layer.allow_origin(Any)
    } else {
        let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
        layer.allow_origin(AllowOrigin::list(list))
    }
}

pub fn router(state: AppState, allowed_origins: &[String]) -> Router {
    Router::new()
        .route("/v1/classify", post(classify))
        .route("/v1/labels", get(labels))
        .route("/v1/model/info", get(info))
        .route("/v1/health", get(health))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        // The classify handler enforces its own limit so it can answer with a coded 400.
        .layer(DefaultBodyLimit::disable())
        .layer(cors(allowed_origins))
        .with_state(state)
}

/// Loads the model, binds the configured address, and serves until Ctrl-C.
pub async fn run(cfg: ServiceConfig) -> Result<(), ServeError> {
    let state = AppState::from_config(&cfg)?;
    let listener = tokio::net::TcpListener::bind(cfg.addr).await?;
    tracing::info!(
        addr = %listener.local_addr()?,
        ready = state.is_ready(),
        "serving"
    );
    axum::serve(listener, router(state, &cfg.allowed_origins))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

