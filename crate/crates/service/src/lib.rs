//! HTTP API backing the robot designer: study sessions, design validation
//! and simulation, pool export, and background evolution runs with a live
//! event stream.

mod runs;

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use evorobogami_core::evolution::{bin_of, Cell};
use evorobogami_core::genome::{DesignRecord, FeatureDescriptor, Violation};
use evorobogami_core::session::{training_terrain, Session, SessionStore, Stage, Submission};
use evorobogami_core::simulator::{Frame, SimConfig};
use evorobogami_core::terrain::{Terrain, TerrainKind};
use evorobogami_core::Error;
use serde::{Deserialize, Serialize};

pub use runs::{RunRegistry, RunRequest, RunStatus, RunSummary, StreamEvent};

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Seeds the environment-order permutations.
    pub seed: u64,
    /// Session logs and pool files go here when set.
    pub data_dir: Option<PathBuf>,
    pub sim: SimConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            seed: 0,
            data_dir: None,
            sim: SimConfig::default().with_frames(),
        }
    }
}

pub struct AppState {
    pub sessions: SessionStore,
    pub runs: RunRegistry,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> evorobogami_core::Result<Arc<AppState>> {
        let sessions = match &cfg.data_dir {
            Some(dir) => SessionStore::open(dir.join("sessions"), cfg.seed, cfg.sim.clone())?,
            None => SessionStore::new(cfg.seed, cfg.sim.clone())?,
        };
        Ok(Arc::new(AppState {
            sessions,
            runs: RunRegistry::default(),
        }))
    }
}

/// Core errors mapped onto HTTP statuses.
#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Core(Error),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Core(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Core(e) => {
                let status = match &e {
                    Error::InvalidGenome(_) | Error::Config(_) | Error::InfeasibleSeeds { .. } => {
                        StatusCode::UNPROCESSABLE_ENTITY
                    }
                    Error::Quota(_) => StatusCode::FORBIDDEN,
                    Error::Sequence(_) => StatusCode::CONFLICT,
                    Error::Busy => StatusCode::TOO_MANY_REQUESTS,
                    _ => StatusCode::INTERNAL_SERVER_ERROR,
                };
                (status, e.to_string())
            }
        };
        (status, Json(serde_json::json!({ "error": msg }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/environments", get(environments))
        .route("/designs/validate", post(validate))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/simulate", post(simulate))
        .route("/sessions/{id}/advance", post(advance))
        .route("/pool/{env}", get(pool))
        .route("/runs", post(runs::start))
        .route("/runs/{id}", get(runs::status))
        .route("/runs/{id}/stream", get(runs::stream))
        .route("/runs/{id}/log", get(runs::log_csv))
        .route("/runs/{id}/archive", get(runs::archive_csv))
        .with_state(state)
}

pub async fn serve(port: u16, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    axum::serve(listener, router(state)).await
}

#[derive(Serialize)]
struct EnvironmentInfo {
    name: String,
    training: bool,
    terrain: Terrain,
}

async fn environments() -> Json<Vec<EnvironmentInfo>> {
    let mut out: Vec<EnvironmentInfo> = TerrainKind::ALL
        .iter()
        .map(|&k| EnvironmentInfo {
            name: k.name().to_string(),
            training: false,
            terrain: Terrain::new(k),
        })
        .collect();
    out.push(EnvironmentInfo {
        name: Stage::Training.to_string(),
        training: true,
        terrain: training_terrain(),
    });
    Json(out)
}

#[derive(Serialize)]
struct Validation {
    valid: bool,
    violations: Vec<Violation>,
    features: FeatureDescriptor,
    cell: Cell,
}

async fn validate(Json(design): Json<DesignRecord>) -> Json<Validation> {
    let g = design.genome;
    let features = g.features();
    let violations = g.violations();
    Json(Validation {
        valid: violations.is_empty(),
        violations,
        cell: bin_of(&features),
        features,
    })
}

#[derive(Deserialize)]
struct CreateSession {
    participant_id: String,
}

async fn create_session(
    State(st): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<Session>)> {
    Ok((
        StatusCode::CREATED,
        Json(st.sessions.create(&req.participant_id)?),
    ))
}

fn known_session(st: &AppState, id: &str) -> ApiResult<()> {
    match st.sessions.get(id) {
        Some(_) => Ok(()),
        None => Err(ApiError::NotFound(format!("unknown session {id}"))),
    }
}

async fn get_session(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Session>> {
    known_session(&st, &id)?;
    Ok(Json(st.sessions.snapshot(&id)?))
}

async fn advance(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Session>> {
    known_session(&st, &id)?;
    Ok(Json(st.sessions.advance(&id)?))
}

#[derive(Deserialize)]
struct SimulateRequest {
    env: Stage,
    genome: DesignRecord,
    #[serde(default)]
    nonce: Option<String>,
}

#[derive(Serialize)]
struct SimulateResponse {
    env: Stage,
    fitness: f64,
    dx: f64,
    dy: f64,
    fell_off: bool,
    frames: Vec<Frame>,
    remaining: Option<u32>,
    iteration: Option<u32>,
    duplicate: bool,
}

impl From<Submission> for SimulateResponse {
    fn from(s: Submission) -> Self {
        SimulateResponse {
            env: s.stage,
            fitness: s.result.fitness,
            dx: s.result.dx,
            dy: s.result.dy,
            fell_off: s.result.fell_off,
            frames: s.result.frames,
            remaining: s.remaining,
            iteration: s.iteration,
            duplicate: s.duplicate,
        }
    }
}

async fn simulate(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<SimulateRequest>,
) -> ApiResult<Json<SimulateResponse>> {
    known_session(&st, &id)?;
    let sub = tokio::task::spawn_blocking(move || {
        st.sessions
            .submit(&id, req.env, req.genome.genome, req.nonce.as_deref())
    })
    .await
    .map_err(|e| ApiError::Core(Error::Config(format!("simulation task failed: {e}"))))??;
    Ok(Json(sub.into()))
}

async fn pool(State(st): State<Arc<AppState>>, Path(env): Path<String>) -> ApiResult<Response> {
    let kind: TerrainKind = env
        .parse()
        .map_err(|_| ApiError::NotFound(format!("unknown environment {env}")))?;
    let text = st.sessions.export_pool_file(kind)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}
