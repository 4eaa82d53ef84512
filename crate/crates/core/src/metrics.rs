//! Scalar and curve observables: infidelity, CDD fidelity, energy cost.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::algebra::{control_matrix, trace_product, CostateCoords, Distribution, Mat4};
use crate::error::{invalid, Error, Result};
use crate::model::GateTarget;
use crate::propagation::{TimeGrid, UnitaryTrajectory};

/// |Tr(A†B)|² / 16.
pub fn overlap_fidelity(a: &Mat4, b: &Mat4) -> f64 {
    (trace_product(&a.adjoint(), b).norm_sqr() / 16.0).clamp(0.0, 1.0)
}

/// 1 − |Tr(U_target† U)/4|².
pub fn infidelity(u: &Mat4, target: &GateTarget) -> f64 {
    infidelity_matrices(u, target.matrix())
}

pub fn infidelity_matrices(u: &Mat4, target: &Mat4) -> f64 {
    (1.0 - overlap_fidelity(target, u)).clamp(0.0, 1.0)
}

/// F = |Tr(U_id† U_tst)|² / 16.
pub fn cdd_fidelity(u_id: &Mat4, u_tst: &Mat4) -> f64 {
    overlap_fidelity(u_id, u_tst)
}

/// Six control channels h¹..h⁶ sampled on the nodes of a time grid.
///
/// Channels 1–3 drive σ_{x,y,z}⊗I and 4–6 drive I⊗σ_{x,y,z}. Between nodes
/// the waveform is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlTrajectory {
    grid: TimeGrid,
    samples: Vec<[f64; 6]>,
}

impl ControlTrajectory {
    pub fn new(grid: TimeGrid, samples: Vec<[f64; 6]>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} control samples for a grid of {} nodes",
                samples.len(),
                grid.len()
            )));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("control samples must be finite"));
        }
        Ok(ControlTrajectory { grid, samples })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self::constant(grid, [0.0; 6])
    }

    pub fn constant(grid: TimeGrid, value: [f64; 6]) -> Self {
        ControlTrajectory { grid, samples: vec![value; grid.len()] }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[[f64; 6]] {
        &self.samples
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[c]).collect()
    }

    /// Linear interpolation; clamps outside the grid span.
    pub fn value_at(&self, t: f64) -> [f64; 6] {
        let x = ((t - self.grid.t0()) / self.grid.dt()).clamp(0.0, self.grid.n_steps() as f64);
        let i = (x.floor() as usize).min(self.grid.n_steps() - 1);
        let w = x - i as f64;
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        std::array::from_fn(|c| a[c] + w * (b[c] - a[c]))
    }

    /// H_c at time `t`.
    pub fn hamiltonian_at(&self, t: f64) -> Mat4 {
        control_matrix(&self.value_at(t))
    }

    /// Exchanges the qubit-1 channels (1,2,3) with the qubit-2 channels (4,5,6).
    pub fn swap_qubits(&self) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| [s[3], s[4], s[5], s[0], s[1], s[2]])
            .collect();
        ControlTrajectory { grid: self.grid, samples }
    }

    /// All channels scaled by `factor` (e.g. 1/τ to go to rad/s).
    pub fn scaled(&self, factor: f64) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| std::array::from_fn(|c| s[c] * factor))
            .collect();
        ControlTrajectory { grid: self.grid, samples }
    }

    /// Same samples on a different grid with the same node count.
    pub fn with_grid(&self, grid: TimeGrid) -> Result<Self> {
        Self::new(grid, self.samples.clone())
    }

    /// True when every channel outside `dist` is identically zero.
    pub fn respects(&self, dist: &Distribution) -> bool {
        let mask = dist.channel_mask();
        self.samples
            .iter()
            .all(|s| s.iter().zip(mask).all(|(v, on)| on || *v == 0.0))
    }
}

/// (1/2)Σ_k h^k(t)² at every node.
pub fn energy_integrand_curve(controls: &ControlTrajectory) -> Vec<f64> {
    controls
        .samples
        .iter()
        .map(|s| 0.5 * s.iter().map(|v| v * v).sum::<f64>())
        .collect()
}

/// E = ∫ (1/4)Tr(H_c²/2) dt = (1/2)∫ Σ_k (h^k)² dt by the trapezoidal rule.
///
/// With dimensionless controls on a unit grid the result is in ħ²/τ.
pub fn energy_cost(controls: &ControlTrajectory) -> f64 {
    trapezoid(&energy_integrand_curve(controls), controls.grid.dt())
}

/// 1 − infidelity(U(t), target) at every node.
pub fn fidelity_curve(traj: &UnitaryTrajectory, target: &GateTarget) -> Vec<f64> {
    traj.unitaries()
        .iter()
        .map(|u| overlap_fidelity(target.matrix(), u))
        .collect()
}

pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Variational,
    MonteCarlo,
    Krotov,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::MonteCarlo, Method::Krotov, Method::Variational];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Variational => "variational",
            Method::MonteCarlo => "montecarlo",
            Method::Krotov => "krotov",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "variational" => Ok(Method::Variational),
            "montecarlo" | "monte-carlo" | "mc" => Ok(Method::MonteCarlo),
            "krotov" => Ok(Method::Krotov),
            other => Err(invalid(format!("unknown method '{other}'"))),
        }
    }
}

/// Persisted outcome of one optimization run.
///
/// Controls are dimensionless (units of 1/τ on a grid over [0, 1]) and the
/// energy is in ħ²/τ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub method: Method,
    pub gate: String,
    pub axes: String,
    pub infidelity: f64,
    pub energy: f64,
    pub iterations: usize,
    pub seed: u64,
    pub converged: bool,
    /// Initial costate Λ(0) for the geodesic methods.
    pub lambda0: Option<CostateCoords>,
    pub controls: ControlTrajectory,
    /// Infidelity after each iteration (entry 0 is the starting point).
    pub infidelity_trace: Vec<f64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl OptimizationReport {
    pub fn fidelity(&self) -> f64 {
        1.0 - self.infidelity
    }
}
