//! Designer study sessions: tutorial, unlimited training, then a fixed
//! quota of simulations on each task environment in a seeded random order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, MutexGuard, TryLockError};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::dedup_pool;
use crate::genome::{write_design_file, DesignRecord, Genome};
use crate::simulator::{SimConfig, SimResult, Simulator};
use crate::terrain::{Terrain, TerrainKind};
use crate::{Error, Result};

/// Counted simulations per task environment.
pub const SIMULATION_QUOTA: u32 = 10;

/// The practice terrain: a gentler, shorter sine than the task one.
pub fn training_terrain() -> Terrain {
    Terrain {
        amplitude: 1.0,
        wavelength: 20.0,
        ..Terrain::sine()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Tutorial,
    Training,
    Tasks,
    Done,
}

/// Where a submission is aimed: the practice terrain or a task environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Training,
    #[serde(untagged)]
    Task(TerrainKind),
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Training => f.write_str("training"),
            Stage::Task(k) => f.write_str(k.name()),
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("training") {
            Ok(Stage::Training)
        } else {
            s.parse().map(Stage::Task)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub genome: Genome,
    pub fitness: f64,
    /// 0 for the neutral starting design, then 1..=quota.
    pub iteration: u32,
    pub duplicate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub design: Genome,
    pub count: u32,
    pub records: Vec<SessionRecord>,
}

impl EnvState {
    fn fresh() -> Self {
        EnvState {
            design: Genome::neutral(),
            count: 0,
            records: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub stage: Stage,
    pub result: SimResult,
    /// Remaining counted simulations, absent during training.
    pub remaining: Option<u32>,
    pub iteration: Option<u32>,
    pub duplicate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub participant: String,
    pub order: [TerrainKind; 3],
    pub phase: Phase,
    /// Index into `order` while in the tasks phase.
    pub current: usize,
    pub envs: BTreeMap<TerrainKind, EnvState>,
    #[serde(skip)]
    nonces: HashMap<String, Submission>,
}

/// Append-log entries; replaying them rebuilds a session.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        id: String,
        participant: String,
        order: [TerrainKind; 3],
    },
    Advanced {
        phase: Phase,
        current: usize,
        neutral: Option<SessionRecord>,
    },
    Recorded {
        env: TerrainKind,
        record: SessionRecord,
    },
}

impl Session {
    pub fn new(id: String, participant: String, order: [TerrainKind; 3]) -> Session {
        Session {
            id,
            participant,
            order,
            phase: Phase::Tutorial,
            current: 0,
            envs: TerrainKind::ALL
                .iter()
                .map(|&k| (k, EnvState::fresh()))
                .collect(),
            nonces: HashMap::new(),
        }
    }

    /// The stage accepting submissions now, if any.
    pub fn stage(&self) -> Option<Stage> {
        match self.phase {
            Phase::Training => Some(Stage::Training),
            Phase::Tasks => Some(Stage::Task(self.order[self.current])),
            Phase::Tutorial | Phase::Done => None,
        }
    }

    pub fn remaining(&self, env: TerrainKind) -> u32 {
        SIMULATION_QUOTA - self.envs[&env].count
    }

    fn enter_task(&mut self, neutral_fitness: f64) -> SessionRecord {
        let env = self.order[self.current];
        let state = self
            .envs
            .get_mut(&env)
            .expect("every task environment has state");
        let record = SessionRecord {
            genome: Genome::neutral(),
            fitness: neutral_fitness,
            iteration: 0,
            duplicate: false,
        };
        state.design = Genome::neutral();
        state.records.push(record.clone());
        record
    }

    /// Move to the next phase or task environment. Entering a task
    /// environment records the neutral design as iteration 0, scored by
    /// `neutral_fitness`.
    pub fn advance(
        &mut self,
        neutral_fitness: impl Fn(TerrainKind) -> Result<f64>,
    ) -> Result<SessionEvent> {
        let neutral = match self.phase {
            Phase::Tutorial => {
                self.phase = Phase::Training;
                None
            }
            Phase::Training => {
                self.phase = Phase::Tasks;
                self.current = 0;
                Some(self.enter_task(neutral_fitness(self.order[0])?))
            }
            Phase::Tasks if self.current + 1 < self.order.len() => {
                let f = neutral_fitness(self.order[self.current + 1])?;
                self.current += 1;
                Some(self.enter_task(f))
            }
            Phase::Tasks => {
                self.phase = Phase::Done;
                None
            }
            Phase::Done => return Err(Error::Sequence("session already finished".into())),
        };
        Ok(SessionEvent::Advanced {
            phase: self.phase,
            current: self.current,
            neutral,
        })
    }

    /// Check a submission against the phase, order and quota without running it.
    pub fn admit(&self, stage: Stage, genome: &Genome) -> Result<()> {
        genome.validate()?;
        match (self.stage(), stage) {
            (None, _) => Err(Error::Sequence(format!(
                "no simulations during the {:?} phase",
                self.phase
            ))),
            (Some(now), asked) if now != asked => Err(Error::Sequence(format!(
                "current environment is {now}, not {asked}"
            ))),
            (Some(Stage::Task(env)), _) if self.remaining(env) == 0 => {
                Err(Error::Quota(env.name().into()))
            }
            _ => Ok(()),
        }
    }

    /// Record a finished simulation. Training results are returned but not kept.
    pub fn record(
        &mut self,
        stage: Stage,
        genome: Genome,
        result: SimResult,
    ) -> (Submission, Option<SessionEvent>) {
        let Stage::Task(env) = stage else {
            let sub = Submission {
                stage,
                result,
                remaining: None,
                iteration: None,
                duplicate: false,
            };
            return (sub, None);
        };
        let state = self
            .envs
            .get_mut(&env)
            .expect("every task environment has state");
        state.count += 1;
        let duplicate = state.records.last().is_some_and(|r| r.genome == genome);
        let record = SessionRecord {
            genome: genome.clone(),
            fitness: result.fitness,
            iteration: state.count,
            duplicate,
        };
        state.design = genome;
        state.records.push(record.clone());
        let sub = Submission {
            stage,
            result,
            remaining: Some(SIMULATION_QUOTA - state.count),
            iteration: Some(state.count),
            duplicate,
        };
        (sub, Some(SessionEvent::Recorded { env, record }))
    }

    pub fn apply(&mut self, event: &SessionEvent) {
        match event {
            SessionEvent::Created { .. } => {}
            SessionEvent::Advanced {
                phase,
                current,
                neutral,
            } => {
                self.phase = *phase;
                self.current = *current;
                if let Some(r) = neutral {
                    let state = self.envs.get_mut(&self.order[*current]).expect("state");
                    state.design = r.genome.clone();
                    state.records.push(r.clone());
                }
            }
            SessionEvent::Recorded { env, record } => {
                let state = self.envs.get_mut(env).expect("state");
                state.count = state.count.max(record.iteration);
                state.design = record.genome.clone();
                state.records.push(record.clone());
            }
        }
    }

    /// Every stored design for `env`, duplicates included, as pool records.
    pub fn design_records(&self, env: TerrainKind) -> Vec<DesignRecord> {
        self.envs[&env]
            .records
            .iter()
            .map(|r| DesignRecord {
                genome: r.genome.clone(),
                user_id: Some(self.participant.clone()),
                environment: Some(env.name().to_string()),
                iteration: Some(r.iteration),
                recorded_fitness: Some(r.fitness),
            })
            .collect()
    }
}

/// All sessions of one service instance, with per-environment simulators
/// and optional on-disk persistence.
pub struct SessionStore {
    sessions: Mutex<Vec<(String, SessionHandle)>>,
    rng: Mutex<ChaCha8Rng>,
    seed: u64,
    sims: HashMap<Stage, Simulator>,
    neutral: HashMap<TerrainKind, f64>,
    dir: Option<PathBuf>,
}

pub type SessionHandle = Arc<Mutex<Session>>;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl SessionStore {
    /// In-memory store with environment orders drawn from `seed`.
    pub fn new(seed: u64, sim: SimConfig) -> Result<SessionStore> {
        let mut sims = HashMap::new();
        let mut neutral = HashMap::new();
        for k in TerrainKind::ALL {
            let s = Simulator::new(Terrain::new(k), sim.clone())?;
            neutral.insert(k, s.simulate(&Genome::neutral())?.fitness);
            sims.insert(Stage::Task(k), s);
        }
        sims.insert(Stage::Training, Simulator::new(training_terrain(), sim)?);
        Ok(SessionStore {
            sessions: Mutex::new(Vec::new()),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            seed,
            sims,
            neutral,
            dir: None,
        })
    }

    /// Persistent store: replays every session log found in `dir`, then
    /// appends new events there.
    pub fn open(dir: impl Into<PathBuf>, seed: u64, sim: SimConfig) -> Result<SessionStore> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut store = SessionStore::new(seed, sim)?;
        let mut logs: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        logs.sort();
        let mut sessions = Vec::new();
        for path in logs {
            let s = replay(&path)?;
            sessions.push((s.id.clone(), Arc::new(Mutex::new(s))));
        }
        {
            let mut rng = lock(&store.rng);
            for _ in 0..sessions.len() {
                let mut order = TerrainKind::ALL;
                order.shuffle(&mut *rng);
            }
        }
        *lock(&store.sessions) = sessions;
        store.dir = Some(dir);
        Ok(store)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn simulator(&self, stage: Stage) -> &Simulator {
        &self.sims[&stage]
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn append(&self, id: &str, event: &SessionEvent) -> Result<()> {
        let Some(path) = self.log_path(id) else {
            return Ok(());
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let line = serde_json::to_string(event)?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
    }

    pub fn create(&self, participant: &str) -> Result<Session> {
        let mut sessions = lock(&self.sessions);
        let mut order = TerrainKind::ALL;
        order.shuffle(&mut *lock(&self.rng));
        let id = format!("s{:04}", sessions.len() + 1);
        let session = Session::new(id.clone(), participant.to_string(), order);
        self.append(
            &id,
            &SessionEvent::Created {
                id: id.clone(),
                participant: participant.to_string(),
                order,
            },
        )?;
        sessions.push((id, Arc::new(Mutex::new(session.clone()))));
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Option<SessionHandle> {
        lock(&self.sessions)
            .iter()
            .find(|(k, _)| k == id)
            .map(|(_, s)| s.clone())
    }

    pub fn snapshot(&self, id: &str) -> Result<Session> {
        let handle = self
            .get(id)
            .ok_or_else(|| Error::Sequence(format!("unknown session {id}")))?;
        let s = lock(&handle).clone();
        Ok(s)
    }

    pub fn advance(&self, id: &str) -> Result<Session> {
        let handle = self
            .get(id)
            .ok_or_else(|| Error::Sequence(format!("unknown session {id}")))?;
        let mut s = lock(&handle);
        let event = s.advance(|k| Ok(self.neutral[&k]))?;
        self.append(id, &event)?;
        Ok(s.clone())
    }

    /// Run one simulation for a session. A retried `nonce` returns the first
    /// answer without simulating again; a second submission while one is in
    /// flight fails with [`Error::Busy`].
    pub fn submit(
        &self,
        id: &str,
        stage: Stage,
        genome: Genome,
        nonce: Option<&str>,
    ) -> Result<Submission> {
        let handle = self
            .get(id)
            .ok_or_else(|| Error::Sequence(format!("unknown session {id}")))?;
        let mut s = match handle.try_lock() {
            Ok(s) => s,
            Err(TryLockError::Poisoned(e)) => e.into_inner(),
            Err(TryLockError::WouldBlock) => return Err(Error::Busy),
        };
        if let Some(prev) = nonce.and_then(|n| s.nonces.get(n)) {
            return Ok(prev.clone());
        }
        s.admit(stage, &genome)?;
        let result = self.sims[&stage].simulate(&genome)?;
        let (sub, event) = s.record(stage, genome, result);
        if let Some(e) = event {
            self.append(id, &e)?;
        }
        if let Some(n) = nonce {
            s.nonces.insert(n.to_string(), sub.clone());
        }
        Ok(sub)
    }

    /// Every recorded design for `env` over all sessions, consecutive
    /// duplicates removed, in session then iteration order.
    pub fn export_pool(&self, env: TerrainKind) -> Vec<DesignRecord> {
        let sessions = lock(&self.sessions);
        let all: Vec<DesignRecord> = sessions
            .iter()
            .flat_map(|(_, s)| lock(s).design_records(env))
            .collect();
        dedup_pool(&all)
    }

    /// Export and, when persistent, also write `pool_<env>.json` beside the logs.
    pub fn export_pool_file(&self, env: TerrainKind) -> Result<String> {
        let text = write_design_file(&self.export_pool(env))?;
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("pool_{}.json", env.name()));
            fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(text)
    }
}

/// Rebuild a session from its append-log.
pub fn replay(path: &Path) -> Result<Session> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut session: Option<Session> = None;
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: SessionEvent = serde_json::from_str(&line)?;
        match (&mut session, &event) {
            (
                None,
                SessionEvent::Created {
                    id,
                    participant,
                    order,
                },
            ) => {
                session = Some(Session::new(id.clone(), participant.clone(), *order));
            }
            (Some(s), e) => s.apply(e),
            (None, _) => {
                return Err(Error::Config(format!(
                    "{} does not start with a creation event",
                    path.display()
                )))
            }
        }
    }
    session.ok_or_else(|| Error::Config(format!("{} is empty", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> SessionStore {
        let sim = SimConfig {
            duration: 0.5,
            ..SimConfig::default()
        };
        SessionStore::new(11, sim).unwrap()
    }

    fn tweak(g: &Genome, i: usize) -> Genome {
        let mut g = g.clone();
        g.body_scale[0] = 0.5 + 0.01 * i as f64;
        g
    }

    #[test]
    fn same_seed_same_order() {
        let a = store().create("p").unwrap();
        let b = store().create("p").unwrap();
        assert_eq!(a.order, b.order);
        assert_eq!(a.phase, Phase::Tutorial);
        for env in TerrainKind::ALL {
            assert_eq!(a.envs[&env].design, Genome::neutral());
            assert_eq!(a.envs[&env].count, 0);
        }
    }

    #[test]
    fn orders_are_permutations() {
        let st = store();
        for i in 0..12 {
            let mut o = st.create(&format!("p{i}")).unwrap().order.to_vec();
            o.sort();
            assert_eq!(o, TerrainKind::ALL.to_vec());
        }
    }

    #[test]
    fn tutorial_blocks_simulation() {
        let st = store();
        let s = st.create("p").unwrap();
        let e = st
            .submit(&s.id, Stage::Training, Genome::neutral(), None)
            .unwrap_err();
        assert!(matches!(e, Error::Sequence(_)));
    }

    #[test]
    fn training_is_unlimited_and_unrecorded() {
        let st = store();
        let s = st.create("p").unwrap();
        st.advance(&s.id).unwrap();
        for i in 0..15 {
            let sub = st
                .submit(&s.id, Stage::Training, tweak(&Genome::neutral(), i), None)
                .unwrap();
            assert_eq!(sub.remaining, None);
        }
        for env in TerrainKind::ALL {
            assert!(st.export_pool(env).is_empty());
        }
    }

    #[test]
    fn quota_and_order_are_enforced() {
        let st = store();
        let s = st.create("p").unwrap();
        st.advance(&s.id).unwrap();
        st.advance(&s.id).unwrap();
        let first = s.order[0];
        let other = s.order[1];
        let e = st
            .submit(&s.id, Stage::Task(other), Genome::neutral(), None)
            .unwrap_err();
        assert!(matches!(e, Error::Sequence(_)));
        for i in 0..10 {
            let sub = st
                .submit(
                    &s.id,
                    Stage::Task(first),
                    tweak(&Genome::neutral(), i),
                    None,
                )
                .unwrap();
            assert_eq!(sub.remaining, Some(9 - i as u32));
            assert_eq!(sub.iteration, Some(i as u32 + 1));
        }
        let e = st
            .submit(&s.id, Stage::Task(first), Genome::neutral(), None)
            .unwrap_err();
        assert!(matches!(e, Error::Quota(_)));
        let next = st.advance(&s.id).unwrap();
        assert_eq!(next.stage(), Some(Stage::Task(other)));
        assert_eq!(next.envs[&other].design, Genome::neutral());
    }

    #[test]
    fn duplicates_are_flagged_then_dropped_on_export() {
        let st = store();
        let s = st.create("p").unwrap();
        st.advance(&s.id).unwrap();
        st.advance(&s.id).unwrap();
        let env = s.order[0];
        let g = tweak(&Genome::neutral(), 3);
        assert!(
            !st.submit(&s.id, Stage::Task(env), g.clone(), None)
                .unwrap()
                .duplicate
        );
        assert!(
            st.submit(&s.id, Stage::Task(env), g.clone(), None)
                .unwrap()
                .duplicate
        );
        let snap = st.snapshot(&s.id).unwrap();
        assert_eq!(snap.envs[&env].records.len(), 3);
        let pool = st.export_pool(env);
        assert_eq!(pool.len(), 2);
        assert_eq!(pool[0].iteration, Some(0));
        assert_eq!(pool[0].genome, Genome::neutral());
    }

    #[test]
    fn nonce_retries_do_not_count_twice() {
        let st = store();
        let s = st.create("p").unwrap();
        st.advance(&s.id).unwrap();
        st.advance(&s.id).unwrap();
        let env = Stage::Task(s.order[0]);
        let a = st
            .submit(&s.id, env, tweak(&Genome::neutral(), 1), Some("n1"))
            .unwrap();
        let b = st
            .submit(&s.id, env, tweak(&Genome::neutral(), 1), Some("n1"))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(st.snapshot(&s.id).unwrap().envs[&s.order[0]].count, 1);
    }

    #[test]
    fn busy_while_in_flight() {
        let st = store();
        let s = st.create("p").unwrap();
        let handle = st.get(&s.id).unwrap();
        let _held = handle.lock().unwrap();
        let e = st
            .submit(&s.id, Stage::Training, Genome::neutral(), None)
            .unwrap_err();
        assert!(matches!(e, Error::Busy));
    }

    #[test]
    fn full_session_pool_size() {
        let st = store();
        let s = st.create("p").unwrap();
        st.advance(&s.id).unwrap();
        st.advance(&s.id).unwrap();
        for (k, env) in s.order.iter().enumerate() {
            for i in 0..10 {
                st.submit(
                    &s.id,
                    Stage::Task(*env),
                    tweak(&Genome::neutral(), i + 1),
                    None,
                )
                .unwrap();
            }
            let after = st.advance(&s.id).unwrap();
            assert_eq!(after.phase, if k == 2 { Phase::Done } else { Phase::Tasks });
        }
        for env in TerrainKind::ALL {
            assert_eq!(st.export_pool(env).len(), 11);
        }
        assert!(st.advance(&s.id).is_err());
    }

    #[test]
    fn logs_replay_to_the_same_state() {
        let dir = tempfile::tempdir().unwrap();
        let sim = SimConfig {
            duration: 0.5,
            ..SimConfig::default()
        };
        let st = SessionStore::open(dir.path(), 5, sim.clone()).unwrap();
        let s = st.create("alice").unwrap();
        st.advance(&s.id).unwrap();
        st.advance(&s.id).unwrap();
        st.submit(
            &s.id,
            Stage::Task(s.order[0]),
            tweak(&Genome::neutral(), 2),
            None,
        )
        .unwrap();
        let before = st.snapshot(&s.id).unwrap();
        let pool = st.export_pool_file(s.order[0]).unwrap();
        drop(st);
        let reopened = SessionStore::open(dir.path(), 5, sim).unwrap();
        assert_eq!(reopened.snapshot(&s.id).unwrap(), before);
        assert_eq!(reopened.export_pool_file(s.order[0]).unwrap(), pool);
        let next = reopened.create("bob").unwrap();
        assert_eq!(next.id, "s0002");
    }
}
