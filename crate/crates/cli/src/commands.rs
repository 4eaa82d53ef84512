//! The four commands, as library functions returning structured results.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use geogate::algebra::{Distribution, HermitianOperator};
use geogate::metrics::{
    energy_integrand_curve, fidelity_curve, infidelity, overlap_fidelity, ControlTrajectory, Method,
    OptimizationReport,
};
use geogate::model::{GateKind, GateTarget, TWO_PI};
use geogate::opt_krotov::{krotov_optimize, piecewise_trajectory};
use geogate::opt_montecarlo::monte_carlo_optimize;
use geogate::opt_variational::{learn_lambda, GeodesicProblem};
use geogate::propagation::{
    cdd_ideal_unitary, cdd_step_count, cdd_test_unitary, full_stack_unitary, propagate_linear,
    UnitaryTrajectory,
};

use crate::config::RunConfig;
use crate::output::{
    create_dir, write_controls_csv, write_curve_csv, write_json, write_table_csv, write_text, RunMetadata,
};
use crate::plot::{line_chart, Series};
use crate::CliError;

/// `cz`, `cx`, `r` or `custom:<path to JSON matrix>`.
pub fn parse_gate(spec: &str) -> Result<GateTarget, CliError> {
    let spec = spec.trim();
    if let Some(path) = spec.strip_prefix("custom:") {
        return GateTarget::from_json_file(Path::new(path))
            .map_err(|e| CliError::Config(format!("gate file {path}: {e}")));
    }
    match spec.to_ascii_lowercase().as_str() {
        "cz" => Ok(GateTarget::cz()),
        "cx" => Ok(GateTarget::cx()),
        "r" => Ok(GateTarget::r()),
        other => Err(CliError::Config(format!("unknown gate '{other}' (expected cz, cx, r or custom:<path>)"))),
    }
}

/// One of `xyz`, `yz`, `xz`, `xy`. A single axis cannot generate su(4).
pub fn parse_axes(spec: &str) -> Result<Distribution, CliError> {
    let dist = Distribution::parse(spec).map_err(|e| CliError::Config(e.to_string()))?;
    if dist.label().len() < 2 {
        return Err(CliError::Config(format!("axes '{spec}': at least two control axes are required")));
    }
    Ok(dist)
}

pub fn parse_method(spec: &str) -> Result<Method, CliError> {
    spec.parse().map_err(|e: geogate::Error| CliError::Config(e.to_string()))
}

fn run_seed(config: &RunConfig, method: Method) -> u64 {
    match method {
        Method::Variational => config.variational.seed,
        Method::MonteCarlo => config.montecarlo.seed,
        Method::Krotov => 0,
    }
}

pub fn metadata(config: &RunConfig, method: Method) -> RunMetadata {
    RunMetadata {
        tool_version: env!("CARGO_PKG_VERSION"),
        config_hash: config.hash(),
        seed: run_seed(config, method),
        geodesic_steps: match method {
            Method::Krotov => config.krotov.steps,
            _ => config.grids.geodesic_steps,
        },
        cdd_steps_per_fast_period: config.grids.cdd_steps_per_fast_period,
        gate_time_ns: config.physical.gate_time_ns,
    }
}

/// Runs one optimizer against the CDD drift of `config`.
pub fn run_method(
    config: &RunConfig,
    method: Method,
    gate: &GateTarget,
    dist: &Distribution,
) -> Result<OptimizationReport, CliError> {
    let drift = config.params().scaled_drift();
    let report = match method {
        Method::Krotov => krotov_optimize(gate, &drift, dist, &config.krotov)?,
        Method::Variational | Method::MonteCarlo => {
            let problem = GeodesicProblem::new(gate.clone(), drift, *dist, config.grids.geodesic_steps)?;
            if method == Method::Variational {
                learn_lambda(&problem, &config.variational)?
            } else {
                monte_carlo_optimize(&problem, &config.montecarlo)?
            }
        }
    };
    Ok(report)
}

/// U(t) under the reported controls, with the propagation that matches
/// how they were produced: the geodesic for costate methods, exact
/// piecewise-constant steps for Krotov.
pub fn report_trajectory(
    config: &RunConfig,
    report: &OptimizationReport,
    gate: &GateTarget,
    dist: &Distribution,
) -> Result<UnitaryTrajectory, CliError> {
    let drift = config.params().scaled_drift();
    match (&report.method, &report.lambda0) {
        (Method::Krotov, _) | (_, None) => Ok(piecewise_trajectory(&drift, &report.controls)?),
        (_, Some(lambda0)) => {
            let steps = report.controls.grid().n_steps();
            let problem = GeodesicProblem::new(gate.clone(), drift, *dist, steps)?;
            Ok(problem.solve(lambda0)?.trajectory)
        }
    }
}

/// Final fidelity with the controls as given and with the two qubits'
/// channels exchanged, both propagated the same way.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwapCheck {
    pub fidelity: f64,
    pub swapped_fidelity: f64,
}

fn propagate_controls(drift: &HermitianOperator, report: &OptimizationReport, controls: &ControlTrajectory) -> Result<UnitaryTrajectory, CliError> {
    if report.method == Method::Krotov {
        return Ok(piecewise_trajectory(drift, controls)?);
    }
    let d = *drift.matrix();
    Ok(propagate_linear(|t| HermitianOperator::hermitian_part(&(d + controls.hamiltonian_at(t))), controls.grid())?)
}

pub fn swap_check(config: &RunConfig, report: &OptimizationReport, gate: &GateTarget) -> Result<SwapCheck, CliError> {
    let drift = config.params().scaled_drift();
    let plain = propagate_controls(&drift, report, &report.controls)?;
    let swapped = propagate_controls(&drift, report, &report.controls.swap_qubits())?;
    Ok(SwapCheck {
        fidelity: overlap_fidelity(gate.matrix(), plain.final_unitary()),
        swapped_fidelity: overlap_fidelity(gate.matrix(), swapped.final_unitary()),
    })
}

#[derive(Debug, Serialize)]
struct OptimizeRecord<'a> {
    metadata: RunMetadata,
    method: Method,
    gate: &'a str,
    axes: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    swap_check: Option<SwapCheck>,
    report: &'a OptimizationReport,
}

/// Writes report.json, controls.csv, fidelity_curve.csv, energy_integrand.csv
/// and, with `plots`, fidelity.svg and energy_integrand.svg into `dir`.
pub fn write_run(
    dir: &Path,
    config: &RunConfig,
    report: &OptimizationReport,
    gate: &GateTarget,
    dist: &Distribution,
    swap: Option<SwapCheck>,
    plots: bool,
) -> Result<(), CliError> {
    create_dir(dir)?;
    let tau = config.params().tau;
    let record = OptimizeRecord {
        metadata: metadata(config, report.method),
        method: report.method,
        gate: &gate.name,
        axes: dist.label(),
        swap_check: swap,
        report,
    };
    write_json(&dir.join("report.json"), &record)?;
    write_controls_csv(&dir.join("controls.csv"), &report.controls, tau)?;

    let grid = *report.controls.grid();
    let traj = report_trajectory(config, report, gate, dist)?;
    let fidelity = fidelity_curve(&traj, gate);
    let integrand = energy_integrand_curve(&report.controls);
    write_curve_csv(&dir.join("fidelity_curve.csv"), "fidelity", &grid, &fidelity, tau)?;
    write_curve_csv(&dir.join("energy_integrand.csv"), "integrand", &grid, &integrand, tau)?;
    if plots {
        let t_ns: Vec<f64> = grid.nodes().map(|t| t * tau * 1e9).collect();
        let label = format!("{} {} {}", report.method, gate.name, dist.label());
        let f = line_chart(
            &format!("Gate fidelity, {label}"),
            "t (ns)",
            "fidelity",
            &[Series { name: &report.method.to_string(), x: &t_ns, y: &fidelity }],
        );
        write_text(&dir.join("fidelity.svg"), &f)?;
        let e = line_chart(
            &format!("Energy integrand, {label}, E = {:.5}", report.energy),
            "t (ns)",
            "(1/2) Σ h_k² (units of 1/τ²)",
            &[Series { name: &report.method.to_string(), x: &t_ns, y: &integrand }],
        );
        write_text(&dir.join("energy_integrand.svg"), &e)?;
    }
    Ok(())
}

/// `optimize`: runs, writes the result files and returns the report.
pub fn cmd_optimize(
    config: &RunConfig,
    method: Method,
    gate: &GateTarget,
    dist: &Distribution,
    out: &Path,
    plots: bool,
) -> Result<OptimizationReport, CliError> {
    let report = run_method(config, method, gate, dist)?;
    let swap = match gate.kind {
        GateKind::Cz => Some(swap_check(config, &report, gate)?),
        _ => None,
    };
    write_run(out, config, &report, gate, dist, swap, plots)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CddBenchRow {
    /// ω/2π, `None` for the undriven system.
    pub frequency_ghz: Option<f64>,
    pub steps: usize,
    pub fidelity: f64,
}

pub fn cdd_bench(config: &RunConfig) -> Result<Vec<CddBenchRow>, CliError> {
    let params = config.params();
    let spp = config.grids.cdd_steps_per_fast_period;
    let u_id = cdd_ideal_unitary(&params);
    let mut rows = Vec::new();
    if config.cdd_bench.include_undriven {
        let u = cdd_test_unitary(&params, None, spp)?;
        rows.push(CddBenchRow { frequency_ghz: None, steps: 0, fidelity: overlap_fidelity(&u_id, &u) });
    }
    for &f in &config.cdd_bench.frequencies_ghz {
        let omega = TWO_PI * f * 1e9;
        let u = cdd_test_unitary(&params, Some(omega), spp)?;
        rows.push(CddBenchRow {
            frequency_ghz: Some(f),
            steps: cdd_step_count(params.tau, omega, spp),
            fidelity: overlap_fidelity(&u_id, &u),
        });
    }
    Ok(rows)
}

fn frequency_cell(f: Option<f64>) -> String {
    f.map(|v| v.to_string()).unwrap_or_else(|| "none".into())
}

pub fn cmd_cdd_bench(config: &RunConfig, out: &Path) -> Result<Vec<CddBenchRow>, CliError> {
    let rows = cdd_bench(config)?;
    create_dir(out)?;
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![frequency_cell(r.frequency_ghz), r.steps.to_string(), r.fidelity.to_string()])
        .collect();
    write_table_csv(&out.join("cdd_bench.csv"), &["frequency_ghz", "steps", "fidelity"], &cells)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub frequency_ghz: f64,
    pub steps: usize,
    /// |Tr(U_t†·U_CDD†(τ)V(τ))|²/16 with controls and CDD together.
    pub full_stack_fidelity: f64,
    /// The CDD benchmark fidelity at the same frequency.
    pub cdd_only_fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub gate: String,
    pub config_hash: String,
    /// Fidelity of the controls against the averaged drift alone.
    pub drift_model_fidelity: f64,
    pub rows: Vec<VerifyRow>,
}

/// Full-stack fidelity of physical `controls` (seconds, rad/s) at each
/// configured CDD frequency.
pub fn verify_controls(config: &RunConfig, controls: &ControlTrajectory, gate: &GateTarget) -> Result<VerifyReport, CliError> {
    let params = config.params();
    let spp = config.grids.cdd_steps_per_fast_period;
    let cg = controls.grid();
    if cg.t0().abs() > 1e-12 * params.tau || (cg.t1() - params.tau).abs() > 1e-9 * params.tau {
        return Err(CliError::Config(format!(
            "controls span [{:.6}, {:.6}] ns but the configured gate time is {} ns",
            cg.t0() * 1e9,
            cg.t1() * 1e9,
            config.physical.gate_time_ns
        )));
    }
    let h_d = *params.drift_hamiltonian().matrix();
    let model = propagate_linear(|t| HermitianOperator::hermitian_part(&(h_d + controls.hamiltonian_at(t))), cg)?;
    let u_id = cdd_ideal_unitary(&params);
    let rows = config
        .verify
        .frequencies_ghz
        .iter()
        .map(|&f| {
            let omega = TWO_PI * f * 1e9;
            let w = full_stack_unitary(&params, omega, controls, spp)?;
            let u = cdd_test_unitary(&params, Some(omega), spp)?;
            Ok(VerifyRow {
                frequency_ghz: f,
                steps: cdd_step_count(params.tau, omega, spp),
                full_stack_fidelity: overlap_fidelity(gate.matrix(), &w),
                cdd_only_fidelity: overlap_fidelity(&u_id, &u),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(VerifyReport {
        gate: gate.name.clone(),
        config_hash: config.hash(),
        drift_model_fidelity: 1.0 - infidelity(model.final_unitary(), gate),
        rows,
    })
}

/// The eight (gate, axes) rows of the benchmark table.
pub const TABLE1_ROWS: [(GateKind, &str); 8] = [
    (GateKind::Cx, "xyz"),
    (GateKind::Cx, "yz"),
    (GateKind::Cx, "xz"),
    (GateKind::Cx, "xy"),
    (GateKind::R, "xyz"),
    (GateKind::R, "yz"),
    (GateKind::R, "xz"),
    (GateKind::R, "xy"),
];

#[derive(Debug, Clone)]
pub struct TableCell {
    pub gate: GateKind,
    pub axes: &'static str,
    pub method: Method,
    pub outcome: Result<OptimizationReport, String>,
}

impl TableCell {
    pub fn report(&self) -> Option<&OptimizationReport> {
        self.outcome.as_ref().ok()
    }

    pub fn converged(&self) -> bool {
        self.report().is_some_and(|r| r.converged)
    }

    fn dir_name(&self) -> String {
        format!("{}_{}_{}", self.gate, self.axes, self.method)
    }
}

/// Runs every (row, method) cell. Failures are recorded in the cell.
pub fn run_table(config: &RunConfig, rows: &[(GateKind, &'static str)], methods: &[Method]) -> Vec<TableCell> {
    let jobs: Vec<_> = rows.iter().flat_map(|&(g, a)| methods.iter().map(move |&m| (g, a, m))).collect();
    jobs.into_par_iter()
        .map(|(gate, axes, method)| {
            let target = GateTarget::builtin(gate).expect("table rows use built-in gates");
            let outcome = parse_axes(axes)
                .and_then(|dist| run_method(config, method, &target, &dist))
                .map_err(|e| e.to_string());
            TableCell { gate, axes, method, outcome }
        })
        .collect()
}

pub const TABLE1_HEADER: [&str; 11] = [
    "gate",
    "axes",
    "montecarlo_energy",
    "montecarlo_infidelity",
    "montecarlo_converged",
    "krotov_energy",
    "krotov_infidelity",
    "krotov_converged",
    "variational_energy",
    "variational_infidelity",
    "variational_converged",
];

/// Wide rows, one per (gate, axes), methods in the header order.
pub fn table_rows(cells: &[TableCell]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for &(gate, axes) in &TABLE1_ROWS {
        let mut row = vec![gate.to_string(), axes.to_string()];
        let mut present = false;
        for method in [Method::MonteCarlo, Method::Krotov, Method::Variational] {
            let cell = cells.iter().find(|c| c.gate == gate && c.axes == axes && c.method == method);
            present |= cell.is_some();
            match cell.and_then(TableCell::report) {
                Some(r) => row.extend([r.energy.to_string(), r.infidelity.to_string(), r.converged.to_string()]),
                None => row.extend(["NaN".to_string(), "NaN".to_string(), "false".to_string()]),
            }
        }
        if present {
            rows.push(row);
        }
    }
    rows
}

/// `table1`: all cells, per-cell result files, then the merged CSV.
pub fn cmd_table1(config: &RunConfig, out: &Path) -> Result<Vec<TableCell>, CliError> {
    let cells = run_table(config, &TABLE1_ROWS, &Method::ALL);
    create_dir(out)?;
    for cell in &cells {
        let dir: PathBuf = out.join("cells").join(cell.dir_name());
        match &cell.outcome {
            Ok(report) => {
                let gate = GateTarget::builtin(cell.gate).expect("built-in gate");
                let dist = parse_axes(cell.axes)?;
                write_run(&dir, config, report, &gate, &dist, None, false)?;
            }
            Err(msg) => {
                create_dir(&dir)?;
                write_text(&dir.join("error.txt"), &format!("{msg}\n"))?;
            }
        }
    }
    write_table_csv(&out.join("table1.csv"), &TABLE1_HEADER, &table_rows(&cells))?;
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_and_axes_parsing() {
        assert_eq!(parse_gate("CX").unwrap().kind, GateKind::Cx);
        assert!(matches!(parse_gate("swap"), Err(CliError::Config(_))));
        assert!(matches!(parse_gate("custom:/nonexistent/g.json"), Err(CliError::Config(_))));
        assert_eq!(parse_axes("yz").unwrap().label(), "yz");
        assert!(parse_axes("x").is_err());
        assert!(parse_axes("xw").is_err());
        assert_eq!(parse_method("mc").unwrap(), Method::MonteCarlo);
        assert!(parse_method("grape").is_err());
    }

    #[test]
    fn table_rows_mark_failed_cells() {
        let cells = vec![TableCell { gate: GateKind::Cx, axes: "xyz", method: Method::Krotov, outcome: Err("boom".into()) }];
        let rows = table_rows(&cells);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0][5], "NaN");
        assert_eq!(rows[0][7], "false");
    }
}
