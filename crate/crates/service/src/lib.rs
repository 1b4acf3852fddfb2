//! HTTP front end for secure inference.
//!
//! Every route hands its work to a blocking thread, since a session runs all
//! parties on OS threads and can take seconds. Traffic counters of finished
//! prediction sessions are kept in memory for `/v1/sessions/{id}/stats`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use maskmpc::api::{
    BenchRequest, BenchResponse, ErrorBody, FitReluRequest, Health, NetworkInfo, PredictRequest, PredictResponse,
    TrainRequest, TrainResponse,
};
use maskmpc::nn::{poly_relu_fit, Network, ReluFit};
use maskmpc::runtime::ChannelStats;
use maskmpc::{app, Error};
use serde::Deserialize;
use tokio::net::TcpListener;

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<u64, ChannelStats>>>,
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn not_found(message: String) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            message,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::OverflowBound { .. }
            | Error::ShapeMismatch(_)
            | Error::BackendMismatch(..)
            | Error::ScaleMismatch(..)
            | Error::ModeUnsupported(..)
            | Error::Config(_)
            | Error::DegreeTooLow(_)
            | Error::MissingWeights(_)
            | Error::MissingInput(_)
            | Error::NegativeVariance(_)
            | Error::BadMagic(_)
            | Error::TruncatedFile(_)
            | Error::Weights(_) => StatusCode::BAD_REQUEST,
            Error::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> maskmpc::Result<T> + Send + 'static) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => result.map_err(ApiError::from),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: format!("worker failed: {e}"),
        }),
    }
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn network(Path(name): Path<String>) -> ApiResult<NetworkInfo> {
    let network: Network = name.parse().map_err(|e: Error| ApiError::not_found(e.to_string()))?;
    Ok(Json(app::network_info(network)?))
}

async fn predict(State(state): State<AppState>, Json(req): Json<PredictRequest>) -> ApiResult<PredictResponse> {
    let (response, _) = blocking(move || app::predict(&req)).await?;
    state
        .sessions
        .lock()
        .expect("session table poisoned")
        .insert(response.session, response.stats.clone());
    Ok(Json(response))
}

async fn bench(Json(req): Json<BenchRequest>) -> ApiResult<BenchResponse> {
    Ok(Json(blocking(move || app::bench(&req)).await?))
}

async fn fit_relu(Json(req): Json<FitReluRequest>) -> ApiResult<ReluFit> {
    Ok(Json(blocking(move || poly_relu_fit(req.degree, req.interval)).await?))
}

async fn train(Json(req): Json<TrainRequest>) -> ApiResult<TrainResponse> {
    Ok(Json(blocking(move || app::train(&req)).await?))
}

#[derive(Deserialize)]
struct StatsQuery {
    format: Option<String>,
}

async fn session_stats(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    Query(q): Query<StatsQuery>,
) -> Result<Response, ApiError> {
    let stats = state
        .sessions
        .lock()
        .expect("session table poisoned")
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no session {id}")))?;
    Ok(match q.format.as_deref() {
        Some("csv") => ([(header::CONTENT_TYPE, "text/csv")], stats.to_csv()).into_response(),
        Some("json") | None => Json(stats).into_response(),
        Some(other) => {
            return Err(ApiError {
                status: StatusCode::BAD_REQUEST,
                message: format!("unknown format {other:?}"),
            })
        }
    })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/networks/{name}", get(network))
        .route("/v1/predict", post(predict))
        .route("/v1/bench", post(bench))
        .route("/v1/fit-relu", post(fit_relu))
        .route("/v1/train", post(train))
        .route("/v1/sessions/{id}/stats", get(session_stats))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(AppState::default())).await
}

/// Binds `addr` and serves on a fresh multi-threaded runtime.
pub fn run(addr: SocketAddr) -> std::io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = TcpListener::bind(addr).await?;
        serve(listener).await
    })
}
