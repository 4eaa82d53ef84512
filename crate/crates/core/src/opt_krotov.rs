//! First-order Krotov iteration over piecewise-constant controls.
//!
//! Controls h_n^k are constant on each grid interval and each interval is
//! propagated by the exact exponential of its Hamiltonian H_d + Σ_k h_n^k g_k.
//! One iteration propagates the co-state B backward under the old controls
//! from B(τ) = (1/16)Tr[U_t†U(τ)]·U_t, then sweeps forward, updating
//!
//! ```text
//! h_n^k ← h_n^k + (1/λ_a)·Im{(1/4)Tr[B_n† g_k U_n]}
//! ```
//!
//! with U_n already propagated under the updated controls of earlier
//! intervals. The fidelity |Tr(U_t†U)|²/16 is convex in U, so the
//! first-order scheme is monotone once λ_a is large enough.

use serde::{Deserialize, Serialize};

use crate::algebra::{control_generator, control_matrix, expm_hermitian_matrix, trace_product, Distribution, HermitianOperator, Mat4};
use crate::error::{invalid, Result};
use crate::metrics::{infidelity_matrices, ControlTrajectory, Method, OptimizationReport};
use crate::model::GateTarget;
use crate::propagation::{TimeGrid, UnitaryTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrotovSettings {
    /// Initial step weight λ_a.
    pub lambda_a: f64,
    pub max_iter: usize,
    /// Constant initial value of every channel in the distribution (1/τ).
    pub init_amplitude: f64,
    pub steps: usize,
    pub infidelity_tol: f64,
    /// Double λ_a and retry whenever an update lowers the fidelity.
    pub auto_tune: bool,
}

impl Default for KrotovSettings {
    fn default() -> Self {
        KrotovSettings {
            lambda_a: 0.5,
            max_iter: 5000,
            init_amplitude: 0.1,
            steps: 2000,
            infidelity_tol: 1e-5,
            auto_tune: true,
        }
    }
}

/// Non-monotone iterations in a row after which a fixed-λ_a run gives up.
pub const NON_MONOTONE_LIMIT: usize = 10;

impl KrotovSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_a > 0.0 && self.lambda_a.is_finite()) {
            return Err(invalid(format!("lambda_a must be positive, got {}", self.lambda_a)));
        }
        if !self.init_amplitude.is_finite() || self.init_amplitude.abs() >= std::f64::consts::PI {
            return Err(invalid("init_amplitude must be small compared with π"));
        }
        if self.steps < 2 {
            return Err(invalid("steps must be at least 2"));
        }
        if self.infidelity_tol < 0.0 {
            return Err(invalid("infidelity_tol must be non-negative"));
        }
        Ok(())
    }
}

/// Piecewise-constant control state and its forward propagation.
struct Sweep<'a> {
    drift: Mat4,
    dist: &'a Distribution,
    target: Mat4,
    dt: f64,
}

impl Sweep<'_> {
    fn step(&self, h: &[f64; 6]) -> Mat4 {
        expm_hermitian_matrix(&(self.drift + control_matrix(h)), self.dt)
    }

    /// Step propagators of all intervals.
    fn steps(&self, controls: &[[f64; 6]]) -> Vec<Mat4> {
        controls.iter().map(|h| self.step(h)).collect()
    }

    fn final_unitary(steps: &[Mat4]) -> Mat4 {
        steps.iter().fold(Mat4::identity(), |u, v| v * u)
    }

    /// B_n at the start of every interval, propagated backward under `steps`.
    fn costates(&self, steps: &[Mat4], u_final: &Mat4) -> Vec<Mat4> {
        let z = trace_product(&self.target.adjoint(), u_final);
        let mut b = self.target * (z / 16.0);
        let mut out = vec![Mat4::zeros(); steps.len()];
        for n in (0..steps.len()).rev() {
            b = steps[n].adjoint() * b;
            out[n] = b;
        }
        out
    }

    /// One sequential forward sweep; returns new controls, step propagators
    /// and U(τ).
    fn update(&self, controls: &[[f64; 6]], costates: &[Mat4], lambda_a: f64) -> (Vec<[f64; 6]>, Vec<Mat4>, Mat4) {
        let mask = self.dist.channel_mask();
        let mut u = Mat4::identity();
        let mut new_controls = Vec::with_capacity(controls.len());
        let mut new_steps = Vec::with_capacity(controls.len());
        for (h, b) in controls.iter().zip(costates) {
            let bu_adj = b.adjoint();
            let mut h_new = *h;
            for c in 0..6 {
                if mask[c] {
                    let overlap = trace_product(&(bu_adj * control_generator(c)), &u);
                    h_new[c] += 0.25 * overlap.im / lambda_a;
                }
            }
            let v = self.step(&h_new);
            u = v * u;
            new_controls.push(h_new);
            new_steps.push(v);
        }
        (new_controls, new_steps, u)
    }
}

/// (1/2)Σ_n Σ_k (h_n^k)² Δt, exact for piecewise-constant controls.
pub fn piecewise_energy(controls: &[[f64; 6]], dt: f64) -> f64 {
    0.5 * dt * controls.iter().flatten().map(|v| v * v).sum::<f64>()
}

/// Node samples of piecewise-constant controls: node n carries interval n,
/// the last node repeats the last interval.
fn node_samples(controls: &[[f64; 6]]) -> Vec<[f64; 6]> {
    let mut samples = controls.to_vec();
    samples.push(*controls.last().expect("at least two intervals"));
    samples
}

/// U(t) at every node for piecewise-constant controls laid out as in a Krotov
/// report (interval n carried by node n).
pub fn piecewise_trajectory(drift: &HermitianOperator, controls: &ControlTrajectory) -> Result<UnitaryTrajectory> {
    let grid = *controls.grid();
    let samples = controls.samples();
    let mut u = Mat4::identity();
    let mut unitaries = Vec::with_capacity(grid.len());
    unitaries.push(u);
    for h in &samples[..grid.n_steps()] {
        u = expm_hermitian_matrix(&(drift.matrix() + control_matrix(h)), grid.dt()) * u;
        unitaries.push(u);
    }
    UnitaryTrajectory::new(grid, unitaries)
}

/// Runs Krotov iterations from constant controls of `init_amplitude` on
/// every channel of `dist`.
///
/// The report's `energy` is the exact piecewise-constant energy; its
/// `controls` hold interval n at node n.
pub fn krotov_optimize(
    target: &GateTarget,
    drift: &HermitianOperator,
    dist: &Distribution,
    settings: &KrotovSettings,
) -> Result<OptimizationReport> {
    settings.validate()?;
    let grid = TimeGrid::unit(settings.steps)?;
    let sweep = Sweep { drift: *drift.matrix(), dist, target: *target.matrix(), dt: grid.dt() };
    let mask = dist.channel_mask();
    let init: [f64; 6] = std::array::from_fn(|c| if mask[c] { settings.init_amplitude } else { 0.0 });
    let mut controls = vec![init; settings.steps];
    let mut steps = sweep.steps(&controls);
    let mut u = Sweep::final_unitary(&steps);
    let mut current = infidelity_matrices(&u, &sweep.target);
    let mut trace = vec![current];
    let mut lambda_a = settings.lambda_a;
    let mut notes = Vec::new();
    let mut iterations = 0;
    let mut non_monotone = 0;

    while current > settings.infidelity_tol && iterations < settings.max_iter {
        let costates = sweep.costates(&steps, &u);
        let (new_controls, new_steps, new_u) = loop {
            let candidate = sweep.update(&controls, &costates, lambda_a);
            let value = infidelity_matrices(&candidate.2, &sweep.target);
            if !settings.auto_tune || value <= current + 1e-12 {
                break candidate;
            }
            lambda_a *= 2.0;
            if lambda_a > 1e12 {
                notes.push("lambda_a exceeded 1e12 without a monotone update".into());
                break candidate;
            }
        };
        let value = infidelity_matrices(&new_u, &sweep.target);
        if value > current + 1e-12 {
            non_monotone += 1;
        } else {
            non_monotone = 0;
        }
        controls = new_controls;
        steps = new_steps;
        u = new_u;
        current = value;
        trace.push(current);
        iterations += 1;
        if non_monotone >= NON_MONOTONE_LIMIT {
            notes.push(format!(
                "fidelity decreased in {NON_MONOTONE_LIMIT} consecutive iterations; increase lambda_a"
            ));
            break;
        }
    }
    notes.push(format!("final lambda_a {lambda_a}"));
    let converged = current <= settings.infidelity_tol && non_monotone < NON_MONOTONE_LIMIT;
    Ok(OptimizationReport {
        method: Method::Krotov,
        gate: target.name.clone(),
        axes: dist.label(),
        infidelity: current,
        energy: piecewise_energy(&controls, grid.dt()),
        iterations,
        seed: 0,
        converged,
        lambda0: None,
        controls: ControlTrajectory::new(grid, node_samples(&controls))?,
        infidelity_trace: trace,
        notes,
    })
}
