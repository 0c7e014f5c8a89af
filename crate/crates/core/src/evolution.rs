//! MAP-Elites over a 20×20 grid of body length × leg-length spread.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{archive_stats, ArchiveStats};
use crate::genome::{DesignRecord, FeatureDescriptor, Genome, BODY_LENGTH_BOUNDS, LEG_STD_BOUNDS};
use crate::simulator::Simulator;
use crate::terrain::TerrainKind;
use crate::{Error, Result};

pub const GRID: usize = 20;
pub const CELLS: usize = GRID * GRID;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    /// Body-length bin.
    pub row: usize,
    /// Leg-length spread bin.
    pub col: usize,
}

impl Cell {
    pub fn index(self) -> usize {
        self.row * GRID + self.col
    }

    pub fn from_index(i: usize) -> Cell {
        Cell {
            row: i / GRID,
            col: i % GRID,
        }
    }
}

fn bin(v: f64, (lo, hi): (f64, f64)) -> usize {
    let raw = ((v - lo) * GRID as f64 / (hi - lo)).floor();
    if raw.is_nan() || raw < 0.0 {
        0
    } else {
        (raw as usize).min(GRID - 1)
    }
}

pub fn bin_of(f: &FeatureDescriptor) -> Cell {
    Cell {
        row: bin(f.body_length_x, BODY_LENGTH_BOUNDS),
        col: bin(f.leg_length_std, LEG_STD_BOUNDS),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Random,
    Human { user_id: String },
    Evolved { parents: Vec<Cell>, iteration: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Genome,
    pub fitness: f64,
    pub features: FeatureDescriptor,
    pub provenance: Provenance,
}

impl Individual {
    pub fn new(genome: Genome, fitness: f64, provenance: Provenance) -> Individual {
        Individual {
            features: genome.features(),
            genome,
            fitness,
            provenance,
        }
    }

    pub fn cell(&self) -> Cell {
        bin_of(&self.features)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Insertion {
    PlacedNew,
    Replaced,
    Rejected,
}

impl Insertion {
    pub fn changed(self) -> bool {
        self != Insertion::Rejected
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    cells: Vec<Option<Individual>>,
}

impl Default for Archive {
    fn default() -> Self {
        Archive::new()
    }
}

/// One archive.csv row.
#[derive(Debug, Serialize, Deserialize)]
struct ArchiveRow {
    row: usize,
    col: usize,
    fitness: f64,
    provenance: String,
    genome: String,
}

impl Archive {
    pub fn new() -> Archive {
        Archive {
            cells: vec![None; CELLS],
        }
    }

    pub fn get(&self, cell: Cell) -> Option<&Individual> {
        self.cells[cell.index()].as_ref()
    }

    /// Keep the better of the newcomer and the incumbent; ties keep the incumbent.
    pub fn insert(&mut self, ind: Individual) -> Insertion {
        let slot = &mut self.cells[ind.cell().index()];
        match slot {
            None => {
                *slot = Some(ind);
                Insertion::PlacedNew
            }
            Some(cur) if ind.fitness > cur.fitness => {
                *slot = Some(ind);
                Insertion::Replaced
            }
            Some(_) => Insertion::Rejected,
        }
    }

    /// Occupied cells in row-major order.
    pub fn occupied(&self) -> impl Iterator<Item = (Cell, &Individual)> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.as_ref().map(|ind| (Cell::from_index(i), ind)))
    }

    pub fn len(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coverage(&self) -> f64 {
        self.len() as f64 / CELLS as f64
    }

    /// Fitness per cell, row-major.
    pub fn fitness_grid(&self) -> Vec<Option<f64>> {
        self.cells
            .iter()
            .map(|c| c.as_ref().map(|i| i.fitness))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (cell, ind) in self.occupied() {
            out.serialize(ArchiveRow {
                row: cell.row,
                col: cell.col,
                fitness: ind.fitness,
                provenance: serde_json::to_string(&ind.provenance)?,
                genome: serde_json::to_string(&ind.genome)?,
            })?;
        }
        if self.is_empty() {
            out.write_record(["row", "col", "fitness", "provenance", "genome"])?;
        }
        out.flush().map_err(|e| Error::io("archive.csv", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Archive> {
        let mut archive = Archive::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: ArchiveRow = row?;
            let ind = Individual::new(
                serde_json::from_str(&row.genome)?,
                row.fitness,
                serde_json::from_str(&row.provenance)?,
            );
            if ind.cell()
                != (Cell {
                    row: row.row,
                    col: row.col,
                })
            {
                return Err(Error::Config(format!(
                    "archive row ({}, {}) holds a genome binned elsewhere",
                    row.row, row.col
                )));
            }
            let i = ind.cell().index();
            archive.cells[i] = Some(ind);
        }
        Ok(archive)
    }
}

/// Scores genomes. Implementations must be pure so batches can be evaluated
/// in any order.
pub trait Evaluator: Sync {
    fn evaluate(&self, genome: &Genome) -> Result<f64>;
}

impl Evaluator for Simulator {
    fn evaluate(&self, genome: &Genome) -> Result<f64> {
        Ok(self.simulate(genome)?.fitness)
    }
}

impl<F> Evaluator for F
where
    F: Fn(&Genome) -> Result<f64> + Sync,
{
    fn evaluate(&self, genome: &Genome) -> Result<f64> {
        self(genome)
    }
}

/// Evaluate in parallel; results come back in input order.
pub fn evaluate_all<E: Evaluator + ?Sized>(evaluator: &E, genomes: &[Genome]) -> Result<Vec<f64>> {
    genomes
        .par_iter()
        .map(|g| {
            let f = evaluator.evaluate(g)?;
            if f.is_finite() {
                Ok(f)
            } else {
                Err(Error::NumericFault {
                    step: 0,
                    what: "non-finite fitness",
                })
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub environment: TerrainKind,
    pub iterations: u32,
    pub batch_size: usize,
    pub initial_population: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub rng_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            environment: TerrainKind::Ground,
            iterations: 2000,
            batch_size: 30,
            initial_population: 30,
            mutation_rate: 0.1,
            crossover_rate: 0.75,
            rng_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn check(&self) -> Result<()> {
        let rate = |r: f64| (0.0..=1.0).contains(&r);
        if self.batch_size == 0 || self.initial_population == 0 {
            return Err(Error::Config(
                "batch and population sizes must be positive".into(),
            ));
        }
        if !rate(self.mutation_rate) || !rate(self.crossover_rate) {
            return Err(Error::Config("rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn select_parents<R: Rng + ?Sized>(
    archive: &Archive,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(Cell, Individual)>> {
    let occupied: Vec<(Cell, &Individual)> = archive.occupied().collect();
    if occupied.is_empty() {
        return Err(Error::EmptyArchive);
    }
    Ok((0..n)
        .map(|_| {
            let (c, ind) = occupied[rng.gen_range(0..occupied.len())];
            (c, ind.clone())
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Child {
    pub genome: Genome,
    pub crossed: bool,
    pub parents: Vec<Cell>,
}

/// Ring-paired variation: child i crosses parent i with parent i+1 at the
/// crossover rate, otherwise clones parent i; every child is then mutated.
pub fn make_batch<R: Rng + ?Sized>(
    parents: &[(Cell, Individual)],
    cfg: &RunConfig,
    rng: &mut R,
) -> Vec<Child> {
    let n = parents.len();
    (0..n)
        .map(|i| {
            let (ca, a) = &parents[i];
            let (cb, b) = &parents[(i + 1) % n];
            let crossed = rng.gen_bool(cfg.crossover_rate);
            let (base, cells) = if crossed {
                (Genome::crossover(&a.genome, &b.genome, rng), vec![*ca, *cb])
            } else {
                (a.genome.clone(), vec![*ca])
            };
            Child {
                genome: base.mutate(cfg.mutation_rate, rng),
                crossed,
                parents: cells,
            }
        })
        .collect()
}

/// Seeds (re-evaluated here) followed by `n_random` random genomes, all evaluated.
pub fn init_population<R: Rng + ?Sized, E: Evaluator + ?Sized>(
    seeds: &[DesignRecord],
    n_random: usize,
    population: usize,
    rng: &mut R,
    evaluator: &E,
) -> Result<Vec<Individual>> {
    if seeds.len() + n_random != population {
        return Err(Error::Config(format!(
            "{} seeds plus {} random designs do not make a population of {}",
            seeds.len(),
            n_random,
            population
        )));
    }
    for s in seeds {
        s.genome.validate()?;
    }
    let mut genomes: Vec<Genome> = seeds.iter().map(|s| s.genome.clone()).collect();
    genomes.extend((0..n_random).map(|_| Genome::random(rng)));
    let fitness = evaluate_all(evaluator, &genomes)?;
    Ok(genomes
        .into_iter()
        .zip(fitness)
        .enumerate()
        .map(|(i, (g, f))| {
            let provenance = match seeds.get(i) {
                Some(s) => Provenance::Human {
                    user_id: s.user_id.clone().unwrap_or_else(|| format!("anon{i}")),
                },
                None => Provenance::Random,
            };
            Individual::new(g, f, provenance)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: u32,
    pub coverage: f64,
    pub mean_fitness: f64,
    pub best_fitness: f64,
    pub qd_score: f64,
    pub elite_mean: f64,
}

impl LogRecord {
    pub fn new(iter: u32, s: &ArchiveStats) -> LogRecord {
        LogRecord {
            iter,
            coverage: s.coverage,
            mean_fitness: s.mean_fitness,
            best_fitness: s.best_fitness,
            qd_score: s.qd_score,
            elite_mean: s.elite_mean,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r)?;
        }
        if self.records.is_empty() {
            out.write_record([
                "iter",
                "coverage",
                "mean_fitness",
                "best_fitness",
                "qd_score",
                "elite_mean",
            ])?;
        }
        out.flush().map_err(|e| Error::io("log.csv", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<RunLog> {
        let records = csv::Reader::from_reader(r)
            .deserialize()
            .collect::<std::result::Result<Vec<LogRecord>, _>>()?;
        for (i, r) in records.iter().enumerate() {
            if r.iter as usize != i {
                return Err(Error::Config(format!(
                    "log iterations not contiguous at row {i}"
                )));
            }
        }
        Ok(RunLog { records })
    }

    pub fn series(&self, f: impl Fn(&LogRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }
}

/// Progress report after initialization (iteration 0) and after each iteration.
pub struct RunEvent<'a> {
    pub iteration: u32,
    pub record: &'a LogRecord,
    /// Cells placed or replaced during this iteration, sorted.
    pub changed: &'a [Cell],
    pub archive: &'a Archive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub log: RunLog,
    pub archive: Archive,
}

/// Full MAP-Elites run. Deterministic given the config, seeds and evaluator,
/// whatever the worker count.
pub fn run<E: Evaluator + ?Sized>(
    cfg: &RunConfig,
    seeds: &[DesignRecord],
    evaluator: &E,
    mut observer: impl FnMut(&RunEvent<'_>),
) -> Result<RunOutcome> {
    cfg.check()?;
    if seeds.len() > cfg.initial_population {
        return Err(Error::Config(format!(
            "{} seeds exceed the initial population of {}",
            seeds.len(),
            cfg.initial_population
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut archive = Archive::new();
    let mut log = RunLog::default();

    let mut changed = Vec::new();
    let initial = init_population(
        seeds,
        cfg.initial_population - seeds.len(),
        cfg.initial_population,
        &mut rng,
        evaluator,
    )?;
    for ind in initial {
        let cell = ind.cell();
        if archive.insert(ind).changed() {
            changed.push(cell);
        }
    }
    record(&mut log, 0, &archive, &mut changed, &mut observer)?;

    for iteration in 1..=cfg.iterations {
        let parents = select_parents(&archive, cfg.batch_size, &mut rng)?;
        let children = make_batch(&parents, cfg, &mut rng);
        let genomes: Vec<Genome> = children.iter().map(|c| c.genome.clone()).collect();
        let fitness = evaluate_all(evaluator, &genomes)?;
        for (child, f) in children.into_iter().zip(fitness) {
            let ind = Individual::new(
                child.genome,
                f,
                Provenance::Evolved {
                    parents: child.parents,
                    iteration,
                },
            );
            let cell = ind.cell();
            if archive.insert(ind).changed() {
                changed.push(cell);
            }
        }
        record(&mut log, iteration, &archive, &mut changed, &mut observer)?;
    }
    Ok(RunOutcome { log, archive })
}

fn record(
    log: &mut RunLog,
    iteration: u32,
    archive: &Archive,
    changed: &mut Vec<Cell>,
    observer: &mut impl FnMut(&RunEvent<'_>),
) -> Result<()> {
    changed.sort();
    changed.dedup();
    log.records
        .push(LogRecord::new(iteration, &archive_stats(archive)?));
    observer(&RunEvent {
        iteration,
        record: log.records.last().expect("just pushed"),
        changed,
        archive,
    });
    changed.clear();
    Ok(())
}
