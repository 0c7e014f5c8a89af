//! Experiment orchestration: condition × repeat matrices on disk, manifests,
//! post-hoc analysis of a run tree and synthetic seed pools.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    archive_stats, coverage_milestones, dedup_pool, fitness_milestones, pairwise,
    reliability_precision, select_seeds, selectable, MilestoneMode, PairwiseMatrix,
};
use crate::evolution::{
    bin_of, evaluate_all, run, Archive, Evaluator, RunConfig, RunLog, RunOutcome, GRID,
};
use crate::genome::{DesignRecord, Genome};
use crate::simulator::{SimConfig, Simulator};
use crate::terrain::{Terrain, TerrainKind, TerrainOverrides};
use crate::{Error, Result};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "EVOROBOGAMI_THREADS";

pub const LOG_FILE: &str = "log.csv";
pub const ARCHIVE_FILE: &str = "archive.csv";
pub const MANIFEST_FILE: &str = "manifest";

/// A seeding condition: `n_human` seeds, at most `cap` per user, the rest random.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Condition {
    pub n_human: usize,
    pub cap: usize,
}

impl Condition {
    pub const H0: Condition = Condition { n_human: 0, cap: 0 };
    pub const H5: Condition = Condition { n_human: 5, cap: 1 };
    pub const H15: Condition = Condition {
        n_human: 15,
        cap: 2,
    };
    pub const H25: Condition = Condition {
        n_human: 25,
        cap: 3,
    };
    pub const H30: Condition = Condition {
        n_human: 30,
        cap: 3,
    };
    pub const ALL: [Condition; 5] = [Self::H0, Self::H5, Self::H15, Self::H25, Self::H30];

    pub fn name(&self) -> String {
        if Self::ALL.contains(self) {
            format!("h{}", self.n_human)
        } else {
            format!("h{}c{}", self.n_human, self.cap)
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    /// `h0`, `h5`, `h15`, `h25`, `h30`, or a custom `h<n>c<cap>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "unknown condition '{s}' (use h0, h5, h15, h25, h30 or h<n>c<cap>)"
            ))
        };
        let body = s.to_ascii_lowercase();
        let body = body.strip_prefix('h').ok_or_else(bad)?;
        match body.split_once('c') {
            Some((n, cap)) => Ok(Condition {
                n_human: n.parse().map_err(|_| bad())?,
                cap: cap.parse().map_err(|_| bad())?,
            }),
            None => {
                let n: usize = body.parse().map_err(|_| bad())?;
                Self::ALL
                    .iter()
                    .copied()
                    .find(|c| c.n_human == n)
                    .ok_or_else(bad)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub environments: Vec<TerrainKind>,
    pub conditions: Vec<Condition>,
    pub repeats: u32,
    pub base_seed: u64,
    pub out: PathBuf,
    pub iterations: u32,
    pub jobs: usize,
    pub terrain: TerrainOverrides,
    pub sim: SimConfig,
}

impl ExperimentPlan {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        ExperimentPlan {
            environments: vec![TerrainKind::Ground],
            conditions: vec![Condition::H0],
            repeats: 10,
            base_seed: 0,
            out: out.into(),
            iterations: RunConfig::default().iterations,
            jobs: 1,
            terrain: TerrainOverrides::default(),
            sim: SimConfig::default(),
        }
    }

    pub fn terrain_for(&self, env: TerrainKind) -> Result<Terrain> {
        Terrain::new(env).with_overrides(&TerrainOverrides {
            kind: None,
            ..self.terrain.clone()
        })
    }

    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for &env in &self.environments {
            for &condition in &self.conditions {
                for repeat in 0..self.repeats {
                    out.push(RunSpec {
                        environment: env,
                        condition,
                        repeat,
                        rng_seed: self.base_seed + repeat as u64,
                        dir: run_dir(&self.out, env, condition, repeat),
                    });
                }
            }
        }
        out
    }
}

pub fn run_dir(out: &Path, env: TerrainKind, condition: Condition, repeat: u32) -> PathBuf {
    out.join(env.name())
        .join(condition.name())
        .join(format!("run{repeat}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub environment: TerrainKind,
    pub condition: Condition,
    pub repeat: u32,
    pub rng_seed: u64,
    pub dir: PathBuf,
}

/// Everything that determines a run's output, hashed into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub run: RunConfig,
    pub terrain: Terrain,
    pub sim: SimConfig,
    pub condition: Condition,
    pub seeds: Vec<DesignRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub environment: TerrainKind,
    pub condition: String,
    pub repeat: u32,
    pub rng_seed: u64,
    pub settings: RunSettings,
    pub config_sha256: String,
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn config_hash(settings: &RunSettings) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(settings)?.as_bytes()))
}

/// Worker count: the requested number, capped by `EVOROBOGAMI_THREADS` when set.
pub fn worker_threads(requested: usize) -> usize {
    let requested = requested.max(1);
    match std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        Some(cap) if cap > 0 => requested.min(cap),
        _ => requested,
    }
}

pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Designs usable in `env`: tagged for it or untagged, consecutive duplicates removed.
pub fn pool_for(pool: &[DesignRecord], env: TerrainKind) -> Vec<DesignRecord> {
    let matching: Vec<DesignRecord> = pool
        .iter()
        .filter(|r| match &r.environment {
            None => true,
            Some(e) => e.parse::<TerrainKind>().map(|k| k == env).unwrap_or(false),
        })
        .cloned()
        .collect();
    dedup_pool(&matching)
}

/// Run every (environment, condition, repeat) of the plan and persist logs,
/// archives and manifests. Seed feasibility is checked before any run starts.
pub fn run_experiment(plan: &ExperimentPlan, pool: &[DesignRecord]) -> Result<Vec<RunSpec>> {
    plan.sim.gait.check()?;
    let mut seeds_by: BTreeMap<(TerrainKind, Condition), Vec<DesignRecord>> = BTreeMap::new();
    for &env in &plan.environments {
        let env_pool = pool_for(pool, env);
        for &c in &plan.conditions {
            if c.n_human > RunConfig::default().initial_population {
                return Err(Error::Config(format!(
                    "condition {c} exceeds the initial population"
                )));
            }
            let seeds = if c.n_human == 0 {
                Vec::new()
            } else {
                select_seeds(&env_pool, c.n_human, c.cap).map_err(|_| Error::InfeasibleSeeds {
                    need: c.n_human,
                    have: selectable(&env_pool, c.cap),
                })?
            };
            seeds_by.insert((env, c), seeds);
        }
    }
    let mut sims = BTreeMap::new();
    for &env in &plan.environments {
        sims.insert(
            env,
            Simulator::new(plan.terrain_for(env)?, plan.sim.clone())?,
        );
    }

    let specs = plan.runs();
    let pool_threads = thread_pool(worker_threads(plan.jobs))?;
    pool_threads.install(|| {
        specs.par_iter().try_for_each(|spec| {
            let sim = &sims[&spec.environment];
            let settings = RunSettings {
                run: RunConfig {
                    environment: spec.environment,
                    iterations: plan.iterations,
                    rng_seed: spec.rng_seed,
                    ..RunConfig::default()
                },
                terrain: sim.terrain().clone(),
                sim: plan.sim.clone(),
                condition: spec.condition,
                seeds: seeds_by[&(spec.environment, spec.condition)].clone(),
            };
            let outcome = run(&settings.run, &settings.seeds, sim, |_| {})?;
            persist_run(spec, &settings, &outcome)
        })
    })?;
    Ok(specs)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn persist_run(spec: &RunSpec, settings: &RunSettings, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(&spec.dir).map_err(|e| Error::io(&spec.dir, e))?;
    let mut log = Vec::new();
    outcome.log.write_csv(&mut log)?;
    let mut archive = Vec::new();
    outcome.archive.write_csv(&mut archive)?;
    write_file(&spec.dir.join(LOG_FILE), &log)?;
    write_file(&spec.dir.join(ARCHIVE_FILE), &archive)?;
    let manifest = Manifest {
        environment: spec.environment,
        condition: spec.condition.name(),
        repeat: spec.repeat,
        rng_seed: spec.rng_seed,
        settings: settings.clone(),
        config_sha256: config_hash(settings)?,
        files: BTreeMap::from([
            (LOG_FILE.to_string(), sha256_hex(&log)),
            (ARCHIVE_FILE.to_string(), sha256_hex(&archive)),
        ]),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_file(&spec.dir.join(MANIFEST_FILE), text.as_bytes())
}

/// Load a persisted run, reporting every way its files disagree with the manifest.
pub fn load_run(dir: &Path) -> Result<(Manifest, RunLog, Archive, Vec<String>)> {
    let manifest: Manifest = serde_json::from_slice(&read_file(&dir.join(MANIFEST_FILE))?)?;
    let mut problems = Vec::new();
    if config_hash(&manifest.settings)? != manifest.config_sha256 {
        problems.push("config hash does not match recorded settings".to_string());
    }
    let mut load = |name: &str| -> Result<Vec<u8>> {
        let bytes = read_file(&dir.join(name))?;
        match manifest.files.get(name) {
            Some(h) if *h == sha256_hex(&bytes) => {}
            Some(_) => problems.push(format!("{name} hash differs from manifest")),
            None => problems.push(format!("{name} missing from manifest")),
        }
        Ok(bytes)
    };
    let log = RunLog::read_csv(&load(LOG_FILE)?[..])?;
    let archive = Archive::read_csv(&load(ARCHIVE_FILE)?[..])?;
    Ok((manifest, log, archive, problems))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_file(path)?)?)
}

/// A loaded run inside a run tree.
pub struct LoadedRun {
    pub environment: String,
    pub condition: String,
    pub repeat: u32,
    pub log: RunLog,
    pub archive: Archive,
}

fn sorted_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn condition_order(name: &str) -> (usize, usize, String) {
    match name.parse::<Condition>() {
        Ok(c) => (c.n_human, c.cap, name.to_string()),
        Err(_) => (usize::MAX, 0, name.to_string()),
    }
}

/// Walk `<root>/<env>/<condition>/run<k>/`.
pub fn discover_runs(root: &Path) -> Result<(Vec<LoadedRun>, Vec<String>)> {
    let mut runs = Vec::new();
    let mut problems = Vec::new();
    for env_dir in sorted_dirs(root)? {
        let env = env_dir
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        if env.parse::<TerrainKind>().is_err() {
            continue;
        }
        let mut conds = sorted_dirs(&env_dir)?;
        conds
            .sort_by_key(|p| condition_order(&p.file_name().unwrap_or_default().to_string_lossy()));
        for cond_dir in conds {
            let condition = cond_dir
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .to_string();
            let mut reps: Vec<(u32, PathBuf)> = sorted_dirs(&cond_dir)?
                .into_iter()
                .filter_map(|p| {
                    let k = p.file_name()?.to_str()?.strip_prefix("run")?.parse().ok()?;
                    Some((k, p))
                })
                .collect();
            reps.sort();
            for (repeat, dir) in reps {
                let (_, log, archive, issues) = load_run(&dir)?;
                problems.extend(
                    issues
                        .into_iter()
                        .map(|p| format!("{}: {p}", dir.display())),
                );
                runs.push(LoadedRun {
                    environment: env.clone(),
                    condition: condition.clone(),
                    repeat,
                    log,
                    archive,
                });
            }
        }
    }
    Ok((runs, problems))
}

/// Final-value metric compared across conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Coverage,
    MeanFitness,
    BestFitness,
    QdScore,
    EliteMean,
    Reliability,
    Precision,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Coverage,
        Metric::MeanFitness,
        Metric::BestFitness,
        Metric::QdScore,
        Metric::EliteMean,
        Metric::Reliability,
        Metric::Precision,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Coverage => "coverage",
            Metric::MeanFitness => "mean_fitness",
            Metric::BestFitness => "best_fitness",
            Metric::QdScore => "qd_score",
            Metric::EliteMean => "elite_mean",
            Metric::Reliability => "reliability",
            Metric::Precision => "precision",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub environment: String,
    pub condition: String,
    pub repeat: u32,
    pub iterations: u32,
    pub coverage: f64,
    pub mean_fitness: f64,
    pub best_fitness: f64,
    pub qd_score: f64,
    pub elite_mean: f64,
    pub reliability: f64,
    pub precision: f64,
}

impl RunSummary {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Coverage => self.coverage,
            Metric::MeanFitness => self.mean_fitness,
            Metric::BestFitness => self.best_fitness,
            Metric::QdScore => self.qd_score,
            Metric::EliteMean => self.elite_mean,
            Metric::Reliability => self.reliability,
            Metric::Precision => self.precision,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilestoneRow {
    pub environment: String,
    pub condition: String,
    /// `mean`, `elite` or `coverage`.
    pub series: String,
    pub percent: f64,
    /// Mean iteration over the runs that reached the milestone.
    pub mean_iteration: Option<f64>,
    pub reached: usize,
    pub runs: usize,
}

pub struct AnalysisReport {
    pub summaries: Vec<RunSummary>,
    pub milestones: Vec<MilestoneRow>,
    pub pairwise: Vec<(String, Metric, PairwiseMatrix)>,
    pub problems: Vec<String>,
}

fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

impl AnalysisReport {
    pub fn summary_csv(&self) -> Result<String> {
        csv_string(&self.summaries)
    }

    pub fn milestones_csv(&self) -> Result<String> {
        csv_string(&self.milestones)
    }

    /// Wide tables, one per (environment, series): a row per percent and a
    /// column per condition holding the mean iteration, `NA` when no run
    /// reached it.
    pub fn milestone_tables(&self) -> Vec<(String, String, String)> {
        let mut keys: Vec<(String, String)> = Vec::new();
        for m in &self.milestones {
            let k = (m.environment.clone(), m.series.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(env, series)| {
                let rows: Vec<&MilestoneRow> = self
                    .milestones
                    .iter()
                    .filter(|m| m.environment == env && m.series == series)
                    .collect();
                let mut conds: Vec<&str> = Vec::new();
                let mut percents: Vec<f64> = Vec::new();
                for r in &rows {
                    if !conds.contains(&r.condition.as_str()) {
                        conds.push(&r.condition);
                    }
                    if !percents.contains(&r.percent) {
                        percents.push(r.percent);
                    }
                }
                let mut out = format!("percent,{}\n", conds.join(","));
                for p in percents {
                    let cells: Vec<String> = conds
                        .iter()
                        .map(|c| {
                            rows.iter()
                                .find(|r| r.condition == *c && r.percent == p)
                                .and_then(|r| r.mean_iteration)
                                .map_or_else(|| "NA".to_string(), |v| format!("{v:.1}"))
                        })
                        .collect();
                    out.push_str(&format!("{p},{}\n", cells.join(",")));
                }
                (env, series, out)
            })
            .collect()
    }
}

/// Milestone percents used when none are given.
pub const DEFAULT_PERCENTS: [f64; 7] = [30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0];

pub fn analyze(root: &Path, percents: &[f64], metric: Option<Metric>) -> Result<AnalysisReport> {
    let (runs, problems) = discover_runs(root)?;
    let mut summaries = Vec::new();
    let mut envs: Vec<String> = runs.iter().map(|r| r.environment.clone()).collect();
    envs.dedup();
    for env in &envs {
        let group: Vec<&LoadedRun> = runs.iter().filter(|r| &r.environment == env).collect();
        let archives: Vec<&Archive> = group.iter().map(|r| &r.archive).collect();
        let quality = reliability_precision(&archives);
        for (r, q) in group.iter().zip(quality) {
            let s = archive_stats(&r.archive)?;
            summaries.push(RunSummary {
                environment: env.clone(),
                condition: r.condition.clone(),
                repeat: r.repeat,
                iterations: r.log.records.last().map_or(0, |x| x.iter),
                coverage: s.coverage,
                mean_fitness: s.mean_fitness,
                best_fitness: s.best_fitness,
                qd_score: s.qd_score,
                elite_mean: s.elite_mean,
                reliability: q.reliability,
                precision: q.precision,
            });
        }
    }

    let mut milestones = Vec::new();
    let mut groups: Vec<(String, String)> = runs
        .iter()
        .map(|r| (r.environment.clone(), r.condition.clone()))
        .collect();
    groups.dedup();
    for (env, cond) in &groups {
        let members: Vec<&LoadedRun> = runs
            .iter()
            .filter(|r| &r.environment == env && &r.condition == cond)
            .collect();
        let tables: [(&str, Vec<Vec<Option<u32>>>); 3] = [
            (
                "mean",
                members
                    .iter()
                    .map(|r| fitness_milestones(&r.log, percents, MilestoneMode::Mean))
                    .collect(),
            ),
            (
                "elite",
                members
                    .iter()
                    .map(|r| fitness_milestones(&r.log, percents, MilestoneMode::Elite))
                    .collect(),
            ),
            (
                "coverage",
                members
                    .iter()
                    .map(|r| coverage_milestones(&r.log, percents))
                    .collect(),
            ),
        ];
        for (series, per_run) in tables {
            for (pi, &percent) in percents.iter().enumerate() {
                let hit: Vec<f64> = per_run
                    .iter()
                    .filter_map(|m| m[pi])
                    .map(f64::from)
                    .collect();
                milestones.push(MilestoneRow {
                    environment: env.clone(),
                    condition: cond.clone(),
                    series: series.to_string(),
                    percent,
                    mean_iteration: (!hit.is_empty())
                        .then(|| hit.iter().sum::<f64>() / hit.len() as f64),
                    reached: hit.len(),
                    runs: members.len(),
                });
            }
        }
    }

    let mut matrices = Vec::new();
    if let Some(m) = metric {
        for env in &envs {
            let mut samples: Vec<(String, Vec<f64>)> = Vec::new();
            for s in summaries.iter().filter(|s| &s.environment == env) {
                match samples.iter_mut().find(|(c, _)| *c == s.condition) {
                    Some((_, v)) => v.push(s.metric(m)),
                    None => samples.push((s.condition.clone(), vec![s.metric(m)])),
                }
            }
            matrices.push((env.clone(), m, pairwise(&samples)));
        }
    }

    Ok(AnalysisReport {
        summaries,
        milestones,
        pairwise: matrices,
        problems,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    ClusteredHigh,
    ClusteredLow,
    Scattered,
}

impl SeedMode {
    pub fn name(self) -> &'static str {
        match self {
            SeedMode::ClusteredHigh => "clustered_high",
            SeedMode::ClusteredLow => "clustered_low",
            SeedMode::Scattered => "scattered",
        }
    }
}

impl FromStr for SeedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SeedMode::ClusteredHigh,
            SeedMode::ClusteredLow,
            SeedMode::Scattered,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown seed mode '{s}'")))
    }
}

/// Evaluations spent on each hill climb.
pub const CLIMB_BUDGET: usize = 200;
/// Per-gene mutation rate while climbing.
const CLIMB_RATE: f64 = 0.2;

fn climb<E: Evaluator + ?Sized>(seed: u64, evaluator: &E) -> Result<(Genome, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = Genome::neutral();
    let mut best_f = evaluator.evaluate(&best)?;
    for _ in 1..CLIMB_BUDGET {
        let cand = best.mutate(CLIMB_RATE, &mut rng);
        let f = evaluator.evaluate(&cand)?;
        if f >= best_f {
            best = cand;
            best_f = f;
        }
    }
    Ok((best, best_f))
}

/// Stand-in for a recorded human design pool.
///
/// `clustered_high` runs 2n hill climbs from the neutral design for
/// [`CLIMB_BUDGET`] evaluations each and keeps the best n; `clustered_low`
/// samples random designs from the low-length, low-spread quadrant of the
/// map; `scattered` samples uniformly. Designs are dealt round-robin to
/// ⌈n/3⌉ synthetic users.
pub fn generate_synthetic_seeds<R: Rng + ?Sized, E: Evaluator + ?Sized>(
    env: TerrainKind,
    mode: SeedMode,
    n: usize,
    rng: &mut R,
    evaluator: &E,
) -> Result<Vec<DesignRecord>> {
    if n == 0 {
        return Err(Error::Config("seed pool size must be at least 1".into()));
    }
    let designs: Vec<(Genome, f64)> = match mode {
        SeedMode::ClusteredHigh => {
            let seeds: Vec<u64> = (0..2 * n).map(|_| rng.gen()).collect();
            let mut climbed = seeds
                .par_iter()
                .map(|&s| climb(s, evaluator))
                .collect::<Result<Vec<_>>>()?;
            climbed.sort_by(|a, b| b.1.total_cmp(&a.1));
            climbed.truncate(n);
            climbed
        }
        SeedMode::ClusteredLow | SeedMode::Scattered => {
            let half = GRID / 2;
            let genomes: Vec<Genome> = (0..n)
                .map(|_| loop {
                    let g = Genome::random(rng);
                    let c = bin_of(&g.features());
                    if mode == SeedMode::Scattered || (c.row < half && c.col < half) {
                        break g;
                    }
                })
                .collect();
            let fitness = evaluate_all(evaluator, &genomes)?;
            genomes.into_iter().zip(fitness).collect()
        }
    };
    let users = n.div_ceil(3);
    let mut records: Vec<DesignRecord> = Vec::with_capacity(n);
    for (i, (genome, f)) in designs.into_iter().enumerate() {
        if records.iter().any(|r| r.genome == genome) {
            continue;
        }
        records.push(DesignRecord {
            genome,
            user_id: Some(format!("u{:02}", i % users + 1)),
            environment: Some(env.name().to_string()),
            iteration: Some((i / users) as u32 + 1),
            recorded_fitness: Some(f),
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_names() {
        for c in Condition::ALL {
            assert_eq!(c.name().parse::<Condition>().unwrap(), c);
        }
        assert_eq!("H25".parse::<Condition>().unwrap(), Condition::H25);
        let custom: Condition = "h10c2".parse().unwrap();
        assert_eq!(
            custom,
            Condition {
                n_human: 10,
                cap: 2
            }
        );
        assert_eq!(custom.name(), "h10c2");
        assert!("h7".parse::<Condition>().is_err());
        assert!("x5".parse::<Condition>().is_err());
    }

    #[test]
    fn repeat_seeds_are_additive() {
        let mut plan = ExperimentPlan::new("/tmp/x");
        plan.base_seed = 7;
        plan.repeats = 3;
        let seeds: Vec<u64> = plan.runs().iter().map(|r| r.rng_seed).collect();
        assert_eq!(seeds, vec![7, 8, 9]);
        assert!(plan.runs()[2].dir.ends_with("ground/h0/run2"));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
    }

    #[test]
    fn climbs_never_lose_fitness() {
        let ev = |g: &Genome| -> Result<f64> { Ok(g.features().body_length_x) };
        let (g, f) = climb(3, &ev).unwrap();
        assert_eq!(f, g.features().body_length_x);
        assert!(f > Genome::neutral().features().body_length_x);
    }

    #[test]
    fn pool_users_are_round_robin() {
        let ev = |g: &Genome| -> Result<f64> { Ok(g.features().body_length_x) };
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let pool =
            generate_synthetic_seeds(TerrainKind::Ground, SeedMode::Scattered, 7, &mut r, &ev)
                .unwrap();
        let users: Vec<&str> = pool.iter().map(|p| p.user_id.as_deref().unwrap()).collect();
        assert_eq!(users, vec!["u01", "u02", "u03", "u01", "u02", "u03", "u01"]);
        assert!(pool
            .iter()
            .all(|p| p.environment.as_deref() == Some("ground")));
    }

    #[test]
    fn low_cluster_stays_in_its_quadrant() {
        let ev = |_: &Genome| -> Result<f64> { Ok(0.0) };
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let pool =
            generate_synthetic_seeds(TerrainKind::Sine, SeedMode::ClusteredLow, 40, &mut r, &ev)
                .unwrap();
        for p in pool {
            let c = bin_of(&p.genome.features());
            assert!(c.row < 10 && c.col < 10);
        }
    }
}
