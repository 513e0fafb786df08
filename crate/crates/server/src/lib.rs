//! HTTP/JSON front end for the simulator.
//!
//! One-shot runs (`/v1/run`, `/v1/compare`, `/v1/trace`) are stateless.
//! Sessions keep a live [`Platform`] between requests so the registry can be
//! listed and sensors reprogrammed while virtual time is advanced step by step.

use std::collections::HashMap;
use std::future::Future;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use concurpaas_core::api::{
    AdvanceRequest, AdvanceResponse, CompareResponse, ErrorBody, RegistryListing, RunRequest,
    RunResponse, ScaleBody, ScenarioRequest, SessionInfo, StopBody, StopResponse,
};
use concurpaas_core::fireapp::FireEventLog;
use concurpaas_core::iot::{IotError, ReprogramCommand, SensorParams};
use concurpaas_core::platform::PlatformError;
use concurpaas_core::runtime::{ContainerHandle, RuntimeError};
use concurpaas_core::scenario::ScenarioError;
use concurpaas_core::{compare_modes, harness, Platform, SimDuration, VirtualTime};
use tokio::net::TcpListener;
use uuid::Uuid;

type Session = Arc<Mutex<Platform>>;

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<Uuid, Session>>>,
}

impl AppState {
    fn session(&self, id: &str) -> Result<Session, ApiError> {
        let key =
            Uuid::parse_str(id).map_err(|_| ApiError::not_found(format!("no session {id}")))?;
        self.sessions
            .lock()
            .expect("session table poisoned")
            .get(&key)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                details: Vec::new(),
            },
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Validation(problems) => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: ErrorBody {
                    code: "validation".into(),
                    message: format!("{} problem(s) in scenario", problems.len()),
                    details: problems,
                },
            },
            other => ApiError::new(StatusCode::BAD_REQUEST, "parse", other.to_string()),
        }
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        let status = match e {
            RuntimeError::UnknownApp(_) | RuntimeError::UnknownService { .. } => {
                StatusCode::NOT_FOUND
            }
            RuntimeError::AtCapacity { .. } | RuntimeError::DuplicateApp(_) => StatusCode::CONFLICT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, "runtime", e.to_string())
    }
}

impl From<IotError> for ApiError {
    fn from(e: IotError) -> Self {
        let status = match e {
            IotError::UnknownSensor(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, "iot", e.to_string())
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        match e {
            PlatformError::Scenario(s) => s.into(),
            PlatformError::Runtime(r) => r.into(),
            PlatformError::Iot(i) => i.into(),
            other => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "platform",
                other.to_string(),
            ),
        }
    }
}

/// Run CPU-bound simulation work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

type ApiJson<T> = Result<Json<T>, ApiError>;

async fn healthz() -> &'static str {
    "ok"
}

async fn run(body: Result<Json<RunRequest>, JsonRejection>) -> ApiJson<RunResponse> {
    let Json(req) = body?;
    blocking(move || {
        let scenario = req.target.resolve()?;
        let out = harness::run_scenario(&scenario)?;
        Ok(Json(RunResponse {
            trace: req.include_trace.then(|| out.trace.clone()),
            samples_csv: req.include_csv.then(|| out.samples_csv()),
            fire_log_csv: req.include_csv.then(|| out.fire_log_csv()),
            report: out.report,
        }))
    })
    .await
}

async fn compare(body: Result<Json<ScenarioRequest>, JsonRejection>) -> ApiJson<CompareResponse> {
    let Json(req) = body?;
    blocking(move || {
        let scenario = req.resolve()?;
        let comparison = compare_modes(&scenario)?;
        Ok(Json(CompareResponse {
            table: comparison.table(),
            exit_code: comparison.exit_code(),
            comparison,
        }))
    })
    .await
}

async fn trace(body: Result<Json<ScenarioRequest>, JsonRejection>) -> Result<String, ApiError> {
    let Json(req) = body?;
    blocking(move || {
        let scenario = req.resolve()?;
        Ok(harness::run_scenario(&scenario)?.trace)
    })
    .await
}

fn info(id: Uuid, p: &Platform) -> SessionInfo {
    SessionInfo {
        id: id.to_string(),
        seed: p.seed(),
        now_us: p.now().as_micros(),
        horizon_us: p.horizon().as_micros(),
    }
}

async fn open_session(
    State(state): State<AppState>,
    body: Result<Json<ScenarioRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let Json(req) = body?;
    let platform = blocking(move || Ok(Platform::from_scenario(&req.resolve()?)?)).await?;
    let id = Uuid::new_v4();
    let info = info(id, &platform);
    state
        .sessions
        .lock()
        .expect("session table poisoned")
        .insert(id, Arc::new(Mutex::new(platform)));
    tracing::info!(session = %id, "session opened");
    Ok((StatusCode::CREATED, Json(info)))
}

async fn session_info(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiJson<SessionInfo> {
    let session = state.session(&id)?;
    let p = session.lock().expect("session poisoned");
    Ok(Json(info(
        Uuid::parse_str(&id).expect("validated by lookup"),
        &p,
    )))
}

async fn close_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    let key = Uuid::parse_str(&id).map_err(|_| ApiError::not_found(format!("no session {id}")))?;
    match state
        .sessions
        .lock()
        .expect("session table poisoned")
        .remove(&key)
    {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found(format!("no session {id}"))),
    }
}

async fn advance(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<AdvanceRequest>, JsonRejection>,
) -> ApiJson<AdvanceResponse> {
    let Json(req) = body?;
    let session = state.session(&id)?;
    blocking(move || {
        let mut p = session.lock().expect("session poisoned");
        let target = match (req.until_us, req.by_us) {
            (Some(t), _) => VirtualTime(t),
            (None, Some(d)) => p.now() + SimDuration(d),
            (None, None) => p.horizon(),
        };
        if target < p.now() {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "in_past",
                format!("cannot rewind from {} to {target}", p.now()),
            ));
        }
        let target = target.min(p.horizon());
        let events = p.run_until(target);
        Ok(Json(AdvanceResponse {
            now_us: p.now().as_micros(),
            events,
        }))
    })
    .await
}

async fn registry(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiJson<RegistryListing> {
    let session = state.session(&id)?;
    let p = session.lock().expect("session poisoned");
    Ok(Json(RegistryListing {
        now_us: p.now().as_micros(),
        records: p.registry_dump(),
    }))
}

async fn reprogram(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ReprogramCommand>, JsonRejection>,
) -> ApiJson<SensorParams> {
    let Json(cmd) = body?;
    let session = state.session(&id)?;
    let mut p = session.lock().expect("session poisoned");
    Ok(Json(p.reprogram(&cmd)?))
}

async fn scale(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ScaleBody>, JsonRejection>,
) -> ApiJson<Vec<ContainerHandle>> {
    let Json(req) = body?;
    let session = state.session(&id)?;
    let mut p = session.lock().expect("session poisoned");
    Ok(Json(p.scale_out(&req.app_id, &req.service)?))
}

async fn stop(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<StopBody>, JsonRejection>,
) -> ApiJson<StopResponse> {
    let Json(req) = body?;
    let session = state.session(&id)?;
    let mut p = session.lock().expect("session poisoned");
    Ok(Json(StopResponse {
        stopped: p.stop_app(&req.app_id)?,
    }))
}

async fn fire_log(State(state): State<AppState>, Path(id): Path<String>) -> ApiJson<FireEventLog> {
    let session = state.session(&id)?;
    let p = session.lock().expect("session poisoned");
    Ok(Json(p.fire_log().clone()))
}

pub fn router() -> Router {
    router_with_state(AppState::default())
}

pub fn router_with_state(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/run", post(run))
        .route("/v1/compare", post(compare))
        .route("/v1/trace", post(trace))
        .route("/v1/sessions", post(open_session))
        .route("/v1/sessions/:id", get(session_info).delete(close_session))
        .route("/v1/sessions/:id/advance", post(advance))
        .route("/v1/sessions/:id/registry", get(registry))
        .route("/v1/sessions/:id/reprogram", post(reprogram))
        .route("/v1/sessions/:id/scale", post(scale))
        .route("/v1/sessions/:id/stop", post(stop))
        .route("/v1/sessions/:id/fire-log", get(fire_log))
        .with_state(state)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "listening");
    }
    axum::serve(listener, router())
        .with_graceful_shutdown(shutdown)
        .await
}
