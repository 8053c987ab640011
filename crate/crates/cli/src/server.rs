//! HTTP front end. Request and response bodies are the same JSON types the
//! command-line tool reads and writes.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::json;
use tokio::sync::{OnceCell, Semaphore};
use tower_http::cors::CorsLayer;

use forestsat::api::{
    ApiError, AttributionRequest, CounterfactualRequest, Engine, ModelSummary, PredictRequest,
    PredictResponse,
};
use forestsat::attribution::AttributionResult;
use forestsat::counterfactual::CounterfactualResult;
use forestsat::data::Dataset;
use forestsat::report::Report;

/// Extra wall-clock allowance on top of the solver deadline before the
/// request is abandoned.
const GRACE: Duration = Duration::from_secs(2);

pub struct AppState {
    engine: Arc<Engine>,
    test: Option<Arc<Dataset>>,
    jobs: Arc<Semaphore>,
    timeout: Duration,
    report: OnceCell<Result<Arc<Report>, ApiError>>,
}

impl AppState {
    pub fn new(
        engine: Engine,
        test: Option<Dataset>,
        max_concurrent: usize,
        timeout: Duration,
    ) -> Self {
        AppState {
            engine: Arc::new(engine),
            test: test.map(Arc::new),
            jobs: Arc::new(Semaphore::new(max_concurrent.max(1))),
            timeout,
            report: OnceCell::new(),
        }
    }
}

pub struct Failure(ApiError);

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure(e)
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0)).into_response()
    }
}

type Reply<T> = Result<Json<T>, Failure>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, Failure> {
    serde_json::from_slice(body)
        .map_err(|e| Failure(ApiError::new("InvalidRequest", e.to_string())))
}

/// Runs `job` on the blocking pool under the concurrency limit. The job gets
/// a solver deadline; if it still has not returned shortly after that, the
/// request fails with `SolverBudget`.
async fn offload<T, F>(state: &AppState, job: F) -> Result<T, Failure>
where
    T: Send + 'static,
    F: FnOnce(Instant) -> Result<T, ApiError> + Send + 'static,
{
    let permit = state
        .jobs
        .clone()
        .acquire_owned()
        .await
        .map_err(|_| ApiError::new("Internal", "service is shutting down"))?;
    let deadline = Instant::now() + state.timeout;
    let handle = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        job(deadline)
    });
    match tokio::time::timeout(state.timeout + GRACE, handle).await {
        Err(_) => Err(ApiError::new(
            "SolverBudget",
            format!("no answer within {:?}", state.timeout),
        )
        .into()),
        Ok(Err(e)) => Err(ApiError::new("Internal", e.to_string()).into()),
        Ok(Ok(r)) => r.map_err(Failure),
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn model_summary(State(s): State<Arc<AppState>>) -> Json<ModelSummary> {
    Json(s.engine.summary())
}

async fn predict(State(s): State<Arc<AppState>>, body: Bytes) -> Reply<PredictResponse> {
    let req: PredictRequest = parse(&body)?;
    Ok(Json(s.engine.predict(&req)?))
}

async fn counterfactual(
    State(s): State<Arc<AppState>>,
    body: Bytes,
) -> Reply<CounterfactualResult> {
    let req: CounterfactualRequest = parse(&body)?;
    let engine = s.engine.clone();
    let r = offload(&s, move |deadline| {
        engine.counterfactual(&req, Some(deadline))
    })
    .await?;
    Ok(Json(r))
}

async fn attribution(State(s): State<Arc<AppState>>, body: Bytes) -> Reply<AttributionResult> {
    let req: AttributionRequest = parse(&body)?;
    let engine = s.engine.clone();
    let r = offload(&s, move |_| engine.attribution(&req, 0)).await?;
    Ok(Json(r))
}

async fn report(State(s): State<Arc<AppState>>) -> Response {
    let Some(test) = s.test.clone() else {
        return Failure(ApiError::new(
            "NoReport",
            "service was started without test data",
        ))
        .into_response();
    };
    let r = s
        .report
        .get_or_init(|| async {
            let engine = s.engine.clone();
            let job = tokio::task::spawn_blocking(move || {
                engine.report(&test, &CounterfactualRequest::default(), None)
            });
            match job.await {
                Ok(r) => r.map(Arc::new),
                Err(e) => Err(ApiError::new("Internal", e.to_string())),
            }
        })
        .await;
    match r {
        Ok(report) => Json(report.as_ref()).into_response(),
        Err(e) => Failure(e.clone()).into_response(),
    }
}

async fn not_found() -> Failure {
    Failure(ApiError::new("NotFound", "no such endpoint"))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model/summary", get(model_summary))
        .route("/predict", post(predict))
        .route("/counterfactual", post(counterfactual))
        .route("/attribution", post(attribution))
        .route("/report", get(report))
        .fallback(not_found)
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
