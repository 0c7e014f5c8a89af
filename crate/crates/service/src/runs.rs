//! Background evolution runs and their event streams.

use std::convert::Infallible;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::Json;
use evorobogami_core::analysis::select_seeds;
use evorobogami_core::evolution::{run, Archive, Individual, LogRecord, RunConfig, RunLog};
use evorobogami_core::genome::DesignRecord;
use evorobogami_core::runner::{pool_for, Condition};
use evorobogami_core::simulator::{SimConfig, Simulator};
use evorobogami_core::terrain::{Terrain, TerrainKind};
use evorobogami_core::Error;
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::{ApiError, ApiResult, AppState};

#[derive(Clone, Debug, Deserialize)]
pub struct RunRequest {
    pub env: TerrainKind,
    #[serde(default = "default_condition")]
    pub condition: String,
    #[serde(default)]
    pub iterations: Option<u32>,
    #[serde(default)]
    pub rng_seed: u64,
    /// Seed pool to select from; the service's exported pool when absent.
    #[serde(default)]
    pub seeds: Option<Vec<DesignRecord>>,
}

fn default_condition() -> String {
    "h0".into()
}

/// One iteration of a run: its log record and every cell that changed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub iteration: u32,
    pub record: LogRecord,
    pub changed: Vec<Individual>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    pub env: TerrainKind,
    pub condition: String,
    pub iterations: u32,
    pub rng_seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub latest: Option<LogRecord>,
    /// Row-major 20×20 fitness grid of the current archive.
    pub grid: Vec<Option<f64>>,
}

struct RunState {
    summary: RunSummary,
    events: Vec<StreamEvent>,
    archive: Archive,
    log: Option<RunLog>,
    final_archive: Option<Archive>,
}

pub struct RunSlot {
    state: Mutex<RunState>,
    tick: watch::Sender<usize>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl RunSlot {
    fn summary(&self) -> RunSummary {
        let s = lock(&self.state);
        RunSummary {
            grid: s.archive.fitness_grid(),
            ..s.summary.clone()
        }
    }

    fn bump(&self) {
        self.tick.send_modify(|n| *n += 1);
    }
}

#[derive(Default)]
pub struct RunRegistry {
    runs: Mutex<Vec<(String, Arc<RunSlot>)>>,
}

impl RunRegistry {
    pub fn get(&self, id: &str) -> Option<Arc<RunSlot>> {
        lock(&self.runs)
            .iter()
            .find(|(k, _)| k == id)
            .map(|(_, s)| s.clone())
    }

    fn add(&self, make: impl FnOnce(String) -> RunSlot) -> (String, Arc<RunSlot>) {
        let mut runs = lock(&self.runs);
        let id = format!("r{:04}", runs.len() + 1);
        let slot = Arc::new(make(id.clone()));
        runs.push((id.clone(), slot.clone()));
        (id, slot)
    }
}

fn slot_of(st: &AppState, id: &str) -> ApiResult<Arc<RunSlot>> {
    st.runs
        .get(id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown run {id}")))
}

pub(crate) async fn start(
    State(st): State<Arc<AppState>>,
    Json(req): Json<RunRequest>,
) -> ApiResult<(StatusCode, Json<RunSummary>)> {
    let condition: Condition = req.condition.parse()?;
    let cfg = RunConfig {
        environment: req.env,
        iterations: req.iterations.unwrap_or(RunConfig::default().iterations),
        rng_seed: req.rng_seed,
        ..RunConfig::default()
    };
    cfg.check()?;
    let seeds = if condition.n_human == 0 {
        Vec::new()
    } else {
        let pool = match req.seeds {
            Some(p) => pool_for(&p, req.env),
            None => st.sessions.export_pool(req.env),
        };
        select_seeds(&pool, condition.n_human, condition.cap)?
    };
    let sim = Simulator::new(Terrain::new(req.env), SimConfig::default())?;
    let (_, slot) = st.runs.add(|id| RunSlot {
        state: Mutex::new(RunState {
            summary: RunSummary {
                id,
                env: req.env,
                condition: condition.name(),
                iterations: cfg.iterations,
                rng_seed: cfg.rng_seed,
                status: RunStatus::Running,
                error: None,
                latest: None,
                grid: Vec::new(),
            },
            events: Vec::new(),
            archive: Archive::new(),
            log: None,
            final_archive: None,
        }),
        tick: watch::channel(0).0,
    });
    let worker = slot.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = run(&cfg, &seeds, &sim, |e| {
            let changed: Vec<Individual> = e
                .changed
                .iter()
                .filter_map(|c| e.archive.get(*c).cloned())
                .collect();
            {
                let mut s = lock(&worker.state);
                for ind in &changed {
                    s.archive.insert(ind.clone());
                }
                s.summary.latest = Some(e.record.clone());
                s.events.push(StreamEvent {
                    iteration: e.iteration,
                    record: e.record.clone(),
                    changed,
                });
            }
            worker.bump();
        });
        {
            let mut s = lock(&worker.state);
            match outcome {
                Ok(out) => {
                    s.summary.status = RunStatus::Done;
                    s.log = Some(out.log);
                    s.final_archive = Some(out.archive);
                }
                Err(e) => {
                    s.summary.status = RunStatus::Failed;
                    s.summary.error = Some(e.to_string());
                }
            }
        }
        worker.bump();
    });
    Ok((StatusCode::ACCEPTED, Json(slot.summary())))
}

pub(crate) async fn status(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<RunSummary>> {
    Ok(Json(slot_of(&st, &id)?.summary()))
}

fn csv_response(body: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "text/csv")], body).into_response()
}

fn unfinished(id: &str) -> ApiError {
    ApiError::Core(Error::Sequence(format!("run {id} has not finished")))
}

pub(crate) async fn log_csv(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let slot = slot_of(&st, &id)?;
    let s = lock(&slot.state);
    let log = s.log.as_ref().ok_or_else(|| unfinished(&id))?;
    let mut out = Vec::new();
    log.write_csv(&mut out)?;
    Ok(csv_response(out))
}

pub(crate) async fn archive_csv(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let slot = slot_of(&st, &id)?;
    let s = lock(&slot.state);
    let archive = s.final_archive.as_ref().ok_or_else(|| unfinished(&id))?;
    let mut out = Vec::new();
    archive.write_csv(&mut out)?;
    Ok(csv_response(out))
}

struct Cursor {
    slot: Arc<RunSlot>,
    rx: watch::Receiver<usize>,
    next: usize,
    finished: bool,
}

async fn next_event(mut c: Cursor) -> Option<(Result<Event, Infallible>, Cursor)> {
    if c.finished {
        return None;
    }
    loop {
        c.rx.borrow_and_update();
        let (event, summary) = {
            let s = lock(&c.slot.state);
            let event = s.events.get(c.next).cloned();
            let summary = (s.summary.status != RunStatus::Running).then(|| s.summary.clone());
            (event, summary)
        };
        if let Some(e) = event {
            c.next += 1;
            let ev = Event::default()
                .event("iteration")
                .id(e.iteration.to_string())
                .json_data(&e)
                .expect("events serialize");
            return Some((Ok(ev), c));
        }
        if let Some(summary) = summary {
            c.finished = true;
            let ev = Event::default()
                .event("end")
                .json_data(&summary)
                .expect("summary serializes");
            return Some((Ok(ev), c));
        }
        if c.rx.changed().await.is_err() {
            return None;
        }
    }
}

/// Every event so far, then live events, then a closing `end` event.
pub(crate) async fn stream(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let slot = slot_of(&st, &id)?;
    let cursor = Cursor {
        rx: slot.tick.subscribe(),
        slot,
        next: 0,
        finished: false,
    };
    Ok(Sse::new(stream::unfold(cursor, next_event)).keep_alive(KeepAlive::default()))
}
