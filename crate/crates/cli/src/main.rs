use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evorobogami_core::controller::GaitTable;
use evorobogami_core::genome::{parse_design_file, write_design_file, DesignRecord};
use evorobogami_core::runner::{
    analyze, generate_synthetic_seeds, load_json, run_experiment, thread_pool, worker_threads,
    Condition, ExperimentPlan, Metric, SeedMode, DEFAULT_PERCENTS,
};
use evorobogami_core::simulator::{SimConfig, Simulator};
use evorobogami_core::terrain::{Terrain, TerrainKind, TerrainOverrides};
use evorobogami_core::{Error, Result};
use evorobogami_service::{AppState, ServiceConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "evorobogami",
    version,
    about = "Legged-robot design and MAP-Elites experiment workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct EnvConfig {
    /// JSON file overriding terrain parameters.
    #[arg(long)]
    terrain_config: Option<PathBuf>,
    /// JSON file replacing the gait target table.
    #[arg(long)]
    gait_config: Option<PathBuf>,
}

impl EnvConfig {
    fn overrides(&self) -> Result<TerrainOverrides> {
        self.terrain_config
            .as_deref()
            .map_or(Ok(TerrainOverrides::default()), load_json)
    }

    fn sim(&self) -> Result<SimConfig> {
        let mut sim = SimConfig::default();
        if let Some(p) = &self.gait_config {
            sim.gait = load_json::<GaitTable>(p)?;
        }
        Ok(sim)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a condition × repeat matrix and persist logs, archives and manifests.
    Run {
        #[arg(long, value_delimiter = ',', default_value = "ground")]
        env: Vec<TerrainKind>,
        /// h0, h5, h15, h25, h30 or h<n>c<cap>.
        #[arg(long, value_delimiter = ',', default_value = "h0")]
        condition: Vec<Condition>,
        #[arg(long, default_value_t = 10)]
        repeats: u32,
        #[arg(long, default_value_t = 2000)]
        iterations: u32,
        /// Repeat k uses this seed plus k.
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        /// Design file to draw seeds from.
        #[arg(long)]
        seeds_file: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        config: EnvConfig,
    },
    /// Simulate one design and print its result.
    Simulate {
        /// Design file; the first record is simulated.
        #[arg(long)]
        genome: PathBuf,
        #[arg(long, default_value = "ground")]
        env: TerrainKind,
        /// Write trajectory frames here as JSON.
        #[arg(long)]
        frames_out: Option<PathBuf>,
        #[command(flatten)]
        config: EnvConfig,
    },
    /// Summaries, milestone tables and pairwise comparisons over a run tree.
    Analyze {
        #[arg(long)]
        runs: PathBuf,
        /// Milestone percents.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PERCENTS)]
        milestones: Vec<f64>,
        /// Metric compared pairwise across conditions.
        #[arg(long)]
        pairwise: Option<Metric>,
        /// Output directory, `<runs>/analysis` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic seed pool as a design file.
    GenSeeds {
        /// clustered_high, clustered_low or scattered.
        #[arg(long)]
        mode: SeedMode,
        #[arg(long, default_value_t = 25)]
        n: usize,
        #[arg(long, default_value = "ground")]
        env: TerrainKind,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Seeds session environment orders.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep session logs and pool files here.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_designs(path: &Path) -> Result<Vec<DesignRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_design_file(&text)
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            env,
            condition,
            repeats,
            iterations,
            rng_seed,
            seeds_file,
            out,
            jobs,
            config,
        } => {
            let pool = seeds_file.as_deref().map_or(Ok(Vec::new()), read_designs)?;
            let plan = ExperimentPlan {
                environments: env,
                conditions: condition,
                repeats,
                base_seed: rng_seed,
                out,
                iterations,
                jobs,
                terrain: config.overrides()?,
                sim: config.sim()?,
            };
            for spec in run_experiment(&plan, &pool)? {
                println!("{}", spec.dir.display());
            }
        }
        Command::Simulate {
            genome,
            env,
            frames_out,
            config,
        } => {
            let design = read_designs(&genome)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::Config(format!("{} holds no designs", genome.display())))?;
            let terrain = Terrain::new(env).with_overrides(&config.overrides()?)?;
            let mut sim = config.sim()?;
            sim.record_frames = frames_out.is_some();
            let result = Simulator::new(terrain, sim)?.simulate(&design.genome)?;
            if let Some(path) = frames_out {
                write(&path, &serde_json::to_string_pretty(&result.frames)?)?;
            }
            let summary = serde_json::json!({
                "env": env,
                "fitness": result.fitness,
                "dx": result.dx,
                "dy": result.dy,
                "fell_off": result.fell_off,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Analyze {
            runs,
            milestones,
            pairwise,
            out,
        } => {
            let report = analyze(&runs, &milestones, pairwise)?;
            let out = out.unwrap_or_else(|| runs.join("analysis"));
            write(&out.join("summary.csv"), &report.summary_csv()?)?;
            write(&out.join("milestones.csv"), &report.milestones_csv()?)?;
            for (env, series, table) in report.milestone_tables() {
                write(&out.join(format!("milestones_{series}_{env}.csv")), &table)?;
                println!("{env} {series} milestones\n{table}");
            }
            for (env, metric, matrix) in &report.pairwise {
                let text = matrix.to_csv();
                write(
                    &out.join(format!("pairwise_{}_{env}.csv", metric.name())),
                    &text,
                )?;
                println!("{env} pairwise {}\n{text}", metric.name());
            }
            if !report.problems.is_empty() {
                for p in &report.problems {
                    eprintln!("manifest mismatch: {p}");
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::GenSeeds {
            mode,
            n,
            env,
            rng_seed,
            out,
            jobs,
        } => {
            let sim = Simulator::new(Terrain::new(env), SimConfig::default())?;
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let pool = thread_pool(worker_threads(jobs))?
                .install(|| generate_synthetic_seeds(env, mode, n, &mut rng, &sim))?;
            let text = write_design_file(&pool)?;
            match out {
                Some(path) => write(&path, &text)?,
                None => println!("{text}"),
            }
        }
        Command::Serve {
            port,
            seed,
            data_dir,
        } => {
            let state = AppState::new(ServiceConfig {
                seed,
                data_dir,
                ..ServiceConfig::default()
            })?;
            let runtime =
                tokio::runtime::Runtime::new().map_err(|e| Error::Config(e.to_string()))?;
            eprintln!("listening on port {port} (session seed {seed})");
            runtime
                .block_on(evorobogami_service::serve(port, state))
                .map_err(|e| Error::Config(format!("server stopped: {e}")))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
