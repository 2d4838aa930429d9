use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ragcheck_core::{check, CheckInput, Error, FactualityReport, PipelineConfig};
use serde::Serialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

use crate::backend::Scorer;
use crate::config::{PipelineOverrides, ServiceConfig};

/// Shared, immutable after startup.
#[derive(Clone)]
pub struct AppState {
    relevance: Arc<dyn Scorer>,
    nli: Arc<dyn Scorer>,
    defaults: PipelineConfig,
    permits: Arc<Semaphore>,
    timeout: Duration,
}

impl AppState {
    pub fn new(
        relevance: Arc<dyn Scorer>,
        nli: Arc<dyn Scorer>,
        defaults: PipelineConfig,
        max_concurrent: usize,
        timeout: Duration,
    ) -> Self {
        Self {
            relevance,
            nli,
            defaults,
            permits: Arc::new(Semaphore::new(max_concurrent)),
            timeout,
        }
    }

    /// Builds both backends described by `config`.
    pub fn from_config(config: &ServiceConfig) -> anyhow::Result<Self> {
        Ok(Self::new(
            config.relevance.build()?,
            config.nli.build()?,
            config.pipeline.clone(),
            config.max_concurrent_requests,
            Duration::from_millis(config.request_timeout_ms),
        ))
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: message.into(),
                field: None,
            },
        }
    }

    fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        let mut err = Self::new(StatusCode::BAD_REQUEST, message);
        err.body.field = Some(field.into());
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let message = err.to_string();
        match err.root() {
            Error::EmptyField(name) => {
                Self::field(name.replacen("contexts", "sources", 1), message)
            }
            Error::InvalidParameter { name, .. } => Self::field(format!("config.{name}"), message),
            Error::MalformedTemplate(_) => Self::field("config.claim_template", message),
            Error::EmptyInput | Error::InvalidIndices(_) => Self::field("sources", message),
            _ if err.is_backend() => Self::new(StatusCode::BAD_GATEWAY, message),
            _ => Self::new(StatusCode::UNPROCESSABLE_ENTITY, message),
        }
    }
}

/// A validated `/v1/check` body.
#[derive(Debug)]
pub struct CheckRequest {
    pub input: CheckInput,
    pub overrides: PipelineOverrides,
}

fn required_string(body: &serde_json::Map<String, Value>, field: &str) -> Result<String, ApiError> {
    match body.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ApiError::field(
            field,
            format!("`{field}` must be a string"),
        )),
        None => Err(ApiError::field(field, format!("missing field `{field}`"))),
    }
}

pub fn parse_check_request(bytes: &[u8]) -> Result<CheckRequest, ApiError> {
    let value: Value = serde_json::from_slice(bytes)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid JSON body: {e}")))?;
    let Value::Object(body) = value else {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "body must be a JSON object",
        ));
    };
    let query = required_string(&body, "query")?;
    let answer = required_string(&body, "answer")?;
    let sources = match body.get("sources") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| ApiError::field("sources", "`sources` must be an array of strings"))?,
        Some(_) => {
            return Err(ApiError::field(
                "sources",
                "`sources` must be an array of strings",
            ))
        }
        None => return Err(ApiError::field("sources", "missing field `sources`")),
    };
    let overrides = match body.get("config") {
        None | Some(Value::Null) => PipelineOverrides::default(),
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| ApiError::field("config", format!("invalid config overrides: {e}")))?,
    };
    let input = CheckInput::new(&query, &answer, &sources)?;
    Ok(CheckRequest { input, overrides })
}

async fn check_handler(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Json<FactualityReport>, ApiError> {
    let request = parse_check_request(&body)?;
    let mut config = state.defaults.clone();
    request.overrides.apply(&mut config);
    config.validate()?;

    let work = async {
        let _permit = state
            .permits
            .clone()
            .acquire_owned()
            .await
            .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "shutting down"))?;
        let (relevance, nli) = (state.relevance.clone(), state.nli.clone());
        tokio::task::spawn_blocking(move || check(&*relevance, &*nli, &request.input, &config))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
            .map_err(ApiError::from)
    };
    match tokio::time::timeout(state.timeout, work).await {
        Ok(report) => Ok(Json(report?)),
        Err(_) => Err(ApiError::new(
            StatusCode::GATEWAY_TIMEOUT,
            "request timed out",
        )),
    }
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn config_handler(State(state): State<AppState>) -> Json<PipelineConfig> {
    Json(state.defaults.clone())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/check", post(check_handler))
        .route("/v1/config", get(config_handler))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn run(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Resolves on ctrl-c or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
    tracing::info!("shutdown signal received, draining");
}

pub fn serve(config: &ServiceConfig) -> anyhow::Result<()> {
    let state = AppState::from_config(config)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async {
        let listener = TcpListener::bind(config.listen).await?;
        tracing::info!(
            addr = %listener.local_addr()?,
            relevance = %config.relevance,
            nli = %config.nli,
            "listening"
        );
        run(listener, state, shutdown_signal()).await?;
        Ok(())
    })
}
