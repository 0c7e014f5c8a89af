//! Co-design workbench for small legged robots: genome encoding, morphology
//! compilation, terrains, a phase-sequenced gait controller, a fast
//! locomotion simulator, MAP-Elites evolution with human-designed seeds and
//! the statistics used to compare seeding conditions.

pub mod analysis;
pub mod controller;
pub mod error;
pub mod evolution;
pub mod genome;
pub mod morphology;
pub mod runner;
pub mod session;
pub mod simulator;
pub mod terrain;

pub use error::{Error, Result};
pub use genome::{Genome, LegGenome, LinkGenome};
pub use morphology::Morphology;
pub use simulator::{SimConfig, SimResult, Simulator};
pub use terrain::{Terrain, TerrainKind};
