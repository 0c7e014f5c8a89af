//! Python bindings. Genomes cross the boundary as JSON text.

use evorobogami_core::analysis::mann_whitney_u;
use evorobogami_core::simulator::fitness as fitness_of;
use evorobogami_core::{Genome, SimConfig, Simulator, Terrain, TerrainKind};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse(genome_json: &str) -> PyResult<Genome> {
    serde_json::from_str(genome_json).map_err(py_err)
}

/// JSON text of the neutral design.
#[pyfunction]
fn neutral_genome() -> PyResult<String> {
    serde_json::to_string(&Genome::neutral()).map_err(py_err)
}

/// JSON text of a mirrored design.
#[pyfunction]
fn mirror(genome_json: &str) -> PyResult<String> {
    serde_json::to_string(&parse(genome_json)?.mirror()).map_err(py_err)
}

/// List of `(field, message)` constraint violations; empty when valid.
#[pyfunction]
fn validate(genome_json: &str) -> PyResult<Vec<(String, String)>> {
    Ok(parse(genome_json)?
        .violations()
        .into_iter()
        .map(|v| (v.field, v.message))
        .collect())
}

/// `(body_length_x, leg_length_std)` in cm.
#[pyfunction]
fn features(genome_json: &str) -> PyResult<(f64, f64)> {
    let f = parse(genome_json)?.features();
    Ok((f.body_length_x, f.leg_length_std))
}

#[pyfunction]
fn fitness(dx: f64, dy: f64) -> f64 {
    fitness_of(dx, dy)
}

/// Simulate a design on `ground`, `sine` or `valley`.
#[pyfunction]
#[pyo3(signature = (genome_json, env = "ground"))]
fn simulate<'py>(py: Python<'py>, genome_json: &str, env: &str) -> PyResult<Bound<'py, PyDict>> {
    let genome = parse(genome_json)?;
    let kind: TerrainKind = env.parse().map_err(py_err)?;
    let result = py
        .detach(|| Simulator::new(Terrain::new(kind), SimConfig::default())?.simulate(&genome))
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("fitness", result.fitness)?;
    out.set_item("dx", result.dx)?;
    out.set_item("dy", result.dy)?;
    out.set_item("fell_off", result.fell_off)?;
    Ok(out)
}

/// `(U, two-sided p)` for the first sample.
#[pyfunction]
fn mann_whitney(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    if x.is_empty() || y.is_empty() {
        return Err(PyValueError::new_err("both samples must be non-empty"));
    }
    let r = mann_whitney_u(&x, &y);
    Ok((r.u, r.p))
}

#[pymodule]
fn evorobogami(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(neutral_genome, m)?)?;
    m.add_function(wrap_pyfunction!(mirror, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(features, m)?)?;
    m.add_function(wrap_pyfunction!(fitness, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney, m)?)?;
    Ok(())
}
