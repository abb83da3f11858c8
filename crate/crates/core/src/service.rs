//! HTTP victim service: a model behind the [`wire`](crate::oracle::wire)
//! protocol with optional truncation, score transform, query budget and
//! token-bucket rate limit.
//!
//! A request is handled in this order: parse, shape check, mode check, rate
//! limit, budget charge, classify. Only requests that reach the last step
//! are counted by `/stats`.
//!
//! Responses never carry logits or model internals; error details are
//! generic.

use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::oneshot;

use crate::oracle::wire::{self, ClassifyRequest, ErrorBody, ErrorDetail, StatsBody, WireMode};
use crate::oracle::{load_model, MlpModel, ModelError, OutputMode, QueryLedger, ScoreTransform};

pub const BIND_ENV: &str = "NBX_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
const BODY_LIMIT: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid service configuration: {0}")]
    Config(String),
    #[error("cannot read config {path}: {source}")]
    ConfigIo {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("cannot load model: {0}")]
    Model(#[from] ModelError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("runtime error: {0}")]
    Runtime(std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceMode {
    /// Full probability vectors; top-k requests are answered too.
    #[default]
    Full,
    /// Only top-k answers.
    Topk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub model_path: PathBuf,
    pub mode: ServiceMode,
    /// Truncation level for top-k answers.
    pub k: usize,
    /// Total classifications served; unlimited when absent.
    pub budget: Option<u64>,
    /// Sustained requests per second; unlimited when absent. Bursts of up to
    /// `max(1, rate_limit)` requests are allowed.
    pub rate_limit: Option<f64>,
    pub bind_address: Option<String>,
    pub score_transform: Option<ScoreTransform>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            model_path: PathBuf::from("model.json"),
            mode: ServiceMode::Full,
            k: 5,
            budget: None,
            rate_limit: None,
            bind_address: None,
            score_transform: None,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ServiceError::ConfigIo {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = toml::from_str(&text).map_err(|e| ServiceError::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        // Relative model paths are taken relative to the config file.
        let cfg = match path.parent() {
            Some(dir) if cfg.model_path.is_relative() => Self {
                model_path: dir.join(&cfg.model_path),
                ..cfg
            },
            _ => cfg,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.k == 0 {
            return Err(ServiceError::Config("k must be at least 1".into()));
        }
        if let Some(t) = self.score_transform {
            ScoreTransform::new(t.scale, t.offset).map_err(|e| ServiceError::Config(e.to_string()))?;
        }
        if let Some(r) = self.rate_limit {
            if !(r.is_finite() && r > 0.0) {
                return Err(ServiceError::Config(format!("rate_limit must be positive, got {r}")));
            }
        }
        if self.budget == Some(0) {
            return Err(ServiceError::Config("budget must be positive".into()));
        }
        Ok(())
    }

    /// Bind address: the configured one, else `NBX_BIND`, else the default.
    pub fn resolved_bind(&self) -> String {
        self.bind_address
            .clone()
            .or_else(|| std::env::var(BIND_ENV).ok())
            .unwrap_or_else(|| DEFAULT_BIND.to_string())
    }
}

struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        Self {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Takes a token, or returns the wait in milliseconds until one is available.
    fn take(&self) -> Result<(), u64> {
        let mut guard = self.state.lock().expect("bucket lock");
        let (tokens, last) = &mut *guard;
        let now = Instant::now();
        *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rate).min(self.capacity);
        *last = now;
        if *tokens >= 1.0 {
            *tokens -= 1.0;
            Ok(())
        } else {
            Err((((1.0 - *tokens) / self.rate) * 1000.0).ceil() as u64)
        }
    }
}

struct AppState {
    model: Arc<MlpModel>,
    mode: ServiceMode,
    k: usize,
    transform: Option<ScoreTransform>,
    ledger: Arc<QueryLedger>,
    bucket: Option<TokenBucket>,
}

fn json(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error(status: StatusCode, kind: &str, detail: &str, retry: Option<u64>) -> Response {
    json(status, wire::encode_error(kind, detail, retry))
}

async fn classify(State(app): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: ClassifyRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(_) => return error(StatusCode::BAD_REQUEST, wire::KIND_BAD_REQUEST, "malformed request body", None),
    };
    let image = match req.image.into_image() {
        Ok(img) if img.shape() == app.model.input_shape() => img,
        Ok(_) => {
            return error(
                StatusCode::BAD_REQUEST,
                wire::KIND_SHAPE,
                "image shape does not match the model input",
                None,
            )
        }
        Err(_) => return error(StatusCode::BAD_REQUEST, wire::KIND_BAD_REQUEST, "invalid image", None),
    };
    let mode = match (req.mode, app.mode) {
        (WireMode::Full, ServiceMode::Topk) => {
            return error(
                StatusCode::BAD_REQUEST,
                wire::KIND_MODE,
                "this service answers top-k requests only",
                None,
            )
        }
        (WireMode::Full, ServiceMode::Full) => OutputMode::Full,
        (WireMode::Topk, _) => OutputMode::Topk {
            k: app.k,
            transform: app.transform,
        },
    };
    if let Some(bucket) = &app.bucket {
        if let Err(wait) = bucket.take() {
            return error(
                StatusCode::TOO_MANY_REQUESTS,
                wire::KIND_RATE,
                "rate limit exceeded",
                Some(wait),
            );
        }
    }
    if let Err(e) = app.ledger.charge(1) {
        let count = match e {
            crate::oracle::OracleError::BudgetExhausted { count } => count,
            _ => app.ledger.count(),
        };
        let body = ErrorBody {
            error: ErrorDetail {
                kind: wire::KIND_BUDGET.into(),
                detail: "query budget exhausted".into(),
            },
            retry_after_ms: Some(0),
            queries: Some(count),
        };
        return json(StatusCode::TOO_MANY_REQUESTS, wire::encode_error_body(&body));
    }
    let probs = match app.model.classify_full(&image) {
        Ok(p) => p,
        Err(_) => {
            app.ledger.refund(1);
            return error(StatusCode::BAD_REQUEST, wire::KIND_SHAPE, "image shape does not match", None);
        }
    };
    match wire::encode_output(&mode.render(probs)) {
        Ok(text) => json(StatusCode::OK, text),
        Err(_) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", "could not encode output", None),
    }
}

async fn stats(State(app): State<Arc<AppState>>) -> Response {
    let body = StatsBody {
        queries: app.ledger.count(),
        budget: app.ledger.budget(),
    };
    json(StatusCode::OK, serde_json::to_string(&body).expect("stats serialize"))
}

async fn not_found() -> Response {
    error(StatusCode::NOT_FOUND, "not_found", "unknown route", None)
}

/// A running service. Dropping the handle shuts it down.
pub struct ServiceHandle {
    addr: SocketAddr,
    ledger: Arc<QueryLedger>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://host:port`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn queries(&self) -> u64 {
        self.ledger.count()
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) -> Result<(), ServiceError> {
        match self.thread.take().map(|t| t.join()) {
            Some(Ok(r)) => r.map_err(ServiceError::Runtime),
            Some(Err(_)) => Err(ServiceError::Runtime(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }

    pub fn shutdown(mut self) -> Result<(), ServiceError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.wait_inner()
    }

    fn wait_inner(&mut self) -> Result<(), ServiceError> {
        match self.thread.take().map(|t| t.join()) {
            Some(Ok(r)) => r.map_err(ServiceError::Runtime),
            Some(Err(_)) => Err(ServiceError::Runtime(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
            let _ = self.wait_inner();
        }
    }
}

/// Loads the model named in `cfg` and starts serving on a background thread.
pub fn serve(cfg: &ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    cfg.validate()?;
    let model = Arc::new(load_model(&cfg.model_path)?);
    serve_model(model, cfg)
}

/// Serves an in-memory model; `cfg.model_path` is ignored. Bind to port 0
/// for an ephemeral port and read it back from [`ServiceHandle::addr`].
pub fn serve_model(model: Arc<MlpModel>, cfg: &ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    cfg.validate()?;
    let bind = cfg.resolved_bind();
    let listener = TcpListener::bind(&bind).map_err(|source| ServiceError::Bind {
        addr: bind.clone(),
        source,
    })?;
    let addr = listener.local_addr().map_err(ServiceError::Runtime)?;
    listener.set_nonblocking(true).map_err(ServiceError::Runtime)?;

    let ledger = Arc::new(QueryLedger::new(cfg.budget));
    let state = Arc::new(AppState {
        model,
        mode: cfg.mode,
        k: cfg.k,
        transform: cfg.score_transform,
        ledger: ledger.clone(),
        bucket: cfg.rate_limit.map(TokenBucket::new),
    });
    let app = Router::new()
        .route("/classify", post(classify))
        .route("/stats", get(stats))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state);

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(ServiceError::Runtime)?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("nbx-service".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        })
        .map_err(ServiceError::Runtime)?;
    Ok(ServiceHandle {
        addr,
        ledger,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
