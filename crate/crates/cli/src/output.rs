//! Result files: report JSON, control and curve CSVs.
//!
//! Controls are exchanged in physical units: `t_ns` and h_k in rad/s.
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces the values bit for bit.

use std::fs;
use std::path::Path;

use serde::Serialize;

use geogate::metrics::{ControlTrajectory, OptimizationReport};
use geogate::propagation::TimeGrid;

use crate::CliError;

pub const CONTROLS_HEADER: [&str; 7] = ["t_ns", "h1", "h2", "h3", "h4", "h5", "h6"];

/// Relative tolerance on the spacing of time columns read from CSV.
const SPACING_TOL: f64 = 1e-9;

/// What is needed to re-run a result exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub tool_version: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub geodesic_steps: usize,
    pub cdd_steps_per_fast_period: usize,
    pub gate_time_ns: f64,
}

#[derive(Debug, Serialize)]
pub struct RunRecord<'a> {
    pub metadata: &'a RunMetadata,
    pub report: &'a OptimizationReport,
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(geogate::Error::from)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes dimensionless controls (grid over [0, 1], units 1/τ) as
/// `t_ns,h1..h6` in rad/s.
pub fn write_controls_csv(path: &Path, controls: &ControlTrajectory, tau: f64) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(CONTROLS_HEADER)?;
    let grid = controls.grid();
    for (i, h) in controls.samples().iter().enumerate() {
        let mut row = Vec::with_capacity(7);
        row.push((grid.node(i) * tau * 1e9).to_string());
        row.extend(h.iter().map(|v| (v / tau).to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a controls file into a trajectory on a grid in seconds with
/// values in rad/s.
pub fn read_controls_csv(path: &Path) -> Result<ControlTrajectory, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != CONTROLS_HEADER {
        return Err(CliError::Config(format!(
            "{}: expected header {}, found {}",
            path.display(),
            CONTROLS_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let parse = |k: usize| -> Result<f64, CliError> {
            record[k].trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                CliError::Config(format!("{}: row {}: bad value '{}'", path.display(), line + 1, &record[k]))
            })
        };
        times.push(parse(0)? * 1e-9);
        let mut h = [0.0; 6];
        for (k, v) in h.iter_mut().enumerate() {
            *v = parse(k + 1)?;
        }
        samples.push(h);
    }
    if times.len() < 3 {
        return Err(CliError::Config(format!("{}: need at least 3 rows", path.display())));
    }
    let n = times.len() - 1;
    let grid = TimeGrid::new(n, times[0], times[n])?;
    let worst = times
        .iter()
        .enumerate()
        .map(|(i, t)| (t - grid.node(i)).abs())
        .fold(0.0, f64::max);
    if worst > SPACING_TOL * grid.span() {
        return Err(CliError::Config(format!("{}: time column is not uniformly spaced", path.display())));
    }
    Ok(ControlTrajectory::new(grid, samples)?)
}

/// Writes `t_ns,<name>` rows for a curve sampled on the unit grid.
pub fn write_curve_csv(path: &Path, name: &str, grid: &TimeGrid, values: &[f64], tau: f64) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["t_ns", name])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([(grid.node(i) * tau * 1e9).to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes rows of already formatted cells under `header`.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
