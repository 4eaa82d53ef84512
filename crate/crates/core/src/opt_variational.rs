//! Adjoint-gradient learning of the initial costate Λ(0).
//!
//! One iteration: integrate the geodesic equation forward from Λ(0), form
//! the terminal costate Γ(τ), integrate the adjoint equation backward, and
//! assemble the gradient
//!
//! ```text
//! ∂I/∂λ_k = −∫ Tr{α_k U†(t) P[Γ(t)] U(t)} dt
//! ```
//!
//! With Γ(τ) built from the 1/16 terminal formula this is the exact
//! derivative of the infidelity I = 1 − |Tr(U_t†U(τ))/4|² with respect to
//! λ_k: there is no leftover constant factor (the finite-difference test
//! below checks this to 1e-3 relative).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{Coords, CostateCoords, Distribution, GeneratorBasis, HermitianOperator, Mat4, C64, DIM};
use crate::error::{invalid, Error, Result};
use crate::metrics::{energy_cost, infidelity, Method, OptimizationReport};
use crate::model::GateTarget;
use crate::propagation::{
    geodesic_endpoint, propagate_adjoint_backward, propagate_geodesic, CostateTrajectory,
    GeodesicSolution, TimeGrid, UnitaryTrajectory,
};

/// Default number of RK4 steps over [0, τ].
pub const DEFAULT_GEODESIC_STEPS: usize = 2000;

/// Γ(τ) = (i/16)Tr[U_t†U]·U_tU† − (i/16)Tr[U†U_t]·UU_t†.
pub fn terminal_costate(u_tau: &Mat4, target: &GateTarget) -> HermitianOperator {
    let t = target.matrix();
    let z = (t.adjoint() * u_tau).trace();
    let m = t * u_tau.adjoint() * z;
    let gamma = (m - m.adjoint()) * C64::new(0.0, 1.0 / 16.0);
    HermitianOperator::hermitian_part(&gamma)
}

/// −∫ Tr{α_k U† P[Γ] U} dt for every basis element, by the trapezoidal rule.
pub fn gradient(
    traj: &UnitaryTrajectory,
    gammas: &CostateTrajectory,
    dist: &Distribution,
) -> Result<Coords> {
    if traj.grid() != gammas.grid() {
        return Err(invalid("state and costate trajectories live on different grids"));
    }
    let basis = GeneratorBasis::pauli();
    let n = traj.grid().n_steps();
    let dt = traj.grid().dt();
    let mut grad = [0.0; DIM];
    for i in 0..=n {
        let u = traj.at(i);
        let pulled = u.adjoint() * dist.project_matrix(gammas.at(i)) * u;
        let coords = basis.coords_of_matrix(&pulled);
        let w = if i == 0 || i == n { 0.5 * dt } else { dt };
        // Tr(α_k M) = 4·coord_k(M)
        for (g, c) in grad.iter_mut().zip(coords) {
            *g -= 4.0 * w * c;
        }
    }
    Ok(grad)
}

/// Target, drift, distribution and grid of one geodesic synthesis problem,
/// in units where τ = 1.
#[derive(Debug, Clone)]
pub struct GeodesicProblem {
    pub target: GateTarget,
    pub drift: HermitianOperator,
    pub dist: Distribution,
    pub grid: TimeGrid,
}

impl GeodesicProblem {
    pub fn new(target: GateTarget, drift: HermitianOperator, dist: Distribution, steps: usize) -> Result<Self> {
        Ok(GeodesicProblem { target, drift, dist, grid: TimeGrid::unit(steps)? })
    }

    pub fn solve(&self, lambda0: &CostateCoords) -> Result<GeodesicSolution> {
        propagate_geodesic(lambda0, &self.drift, &self.dist, &self.grid)
    }

    pub fn endpoint(&self, lambda0: &CostateCoords) -> Result<Mat4> {
        geodesic_endpoint(lambda0, &self.drift, &self.dist, &self.grid)
    }

    pub fn infidelity_at(&self, lambda0: &CostateCoords) -> Result<f64> {
        Ok(infidelity(&self.endpoint(lambda0)?, &self.target))
    }

    /// Gradient of the infidelity at the Λ(0) that produced `forward`.
    pub fn gradient_from(&self, forward: &GeodesicSolution) -> Result<Coords> {
        let gamma_tau = terminal_costate(forward.final_unitary(), &self.target);
        let gammas = propagate_adjoint_backward(forward, &gamma_tau, &self.drift, &self.dist)?;
        gradient(&forward.trajectory, &gammas, &self.dist)
    }

    pub fn gradient_at(&self, lambda0: &CostateCoords) -> Result<Coords> {
        self.gradient_from(&self.solve(lambda0)?)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn report(
        &self,
        method: Method,
        forward: &GeodesicSolution,
        iterations: usize,
        seed: u64,
        converged: bool,
        infidelity_trace: Vec<f64>,
        notes: Vec<String>,
    ) -> OptimizationReport {
        OptimizationReport {
            method,
            gate: self.target.name.clone(),
            axes: self.dist.label(),
            infidelity: infidelity(forward.final_unitary(), &self.target),
            energy: energy_cost(&forward.controls),
            iterations,
            seed,
            converged,
            lambda0: Some(forward.costate),
            controls: forward.controls.clone(),
            infidelity_trace,
            notes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescentSettings {
    /// Largest learning rate η, in (0, 1).
    pub eta: f64,
    pub max_iter: usize,
    pub infidelity_tol: f64,
    pub gradient_tol: f64,
    pub seed: u64,
    /// Initial λ_k are uniform in [−init_scale, init_scale].
    pub init_scale: f64,
    /// Independent starts (seeds `seed`, `seed + 1`, ...); the converged run
    /// with the lowest energy is kept.
    pub starts: usize,
    pub rule: StepRule,
}

/// How the update direction is formed from the adjoint gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// Λ ← Λ − η∇I with adaptive η (see [`descend_from`]). Slow: restricted
    /// distributions typically need thousands of iterations.
    Gradient,
    /// Limited-memory BFGS direction with an Armijo backtracking search.
    Lbfgs,
}

impl Default for DescentSettings {
    fn default() -> Self {
        DescentSettings {
            eta: 0.5,
            max_iter: 10_000,
            infidelity_tol: 1e-8,
            gradient_tol: 1e-10,
            seed: 1,
            init_scale: 1.0,
            starts: 8,
            rule: StepRule::Lbfgs,
        }
    }
}

impl DescentSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(invalid(format!("learning rate must lie in (0, 1), got {}", self.eta)));
        }
        if self.max_iter == 0 || self.starts == 0 {
            return Err(invalid("max_iter and starts must be positive"));
        }
        if !(self.infidelity_tol >= 0.0 && self.gradient_tol >= 0.0) {
            return Err(invalid("tolerances must be non-negative"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(invalid("init_scale must be finite and non-negative"));
        }
        Ok(())
    }
}

/// λ_k i.i.d. uniform in [−scale, scale] from ChaCha8 seeded with `seed`.
pub fn random_costate(seed: u64, scale: f64) -> CostateCoords {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uniform_costate(&mut rng, scale)
}

pub(crate) fn uniform_costate<R: Rng>(rng: &mut R, scale: f64) -> CostateCoords {
    if scale == 0.0 {
        return CostateCoords::zero();
    }
    CostateCoords(std::array::from_fn(|_| rng.random_range(-scale..=scale)))
}

/// Minimizes the infidelity over Λ(0) from `start` using `settings.rule`.
///
/// [`StepRule::Gradient`] is plain descent Λ ← Λ − η∇I with backtracking: a
/// step that raises the infidelity is discarded and η halved; after three
/// accepted steps in a row η grows by 1.2, never beyond `settings.eta`.
///
/// [`StepRule::Lbfgs`] uses the two-loop L-BFGS direction (memory
/// [`LBFGS_MEMORY`]), tries a unit step capped at length
/// [`LBFGS_MAX_STEP`], and halves it until the Armijo condition holds.
///
/// Either way every accepted step lowers (or keeps) the infidelity.
pub fn descend_from(
    problem: &GeodesicProblem,
    start: CostateCoords,
    settings: &DescentSettings,
) -> Result<OptimizationReport> {
    settings.validate()?;
    let mut forward = problem.solve(&start)?;
    let mut current = infidelity(forward.final_unitary(), &problem.target);
    let mut trace = vec![current];
    let mut eta = settings.eta;
    let mut streak = 0;
    let mut memory = LbfgsMemory::default();
    let mut notes = Vec::new();
    let mut iterations = 0;
    let mut grad = [0.0; DIM];
    if current > settings.infidelity_tol {
        grad = problem.gradient_from(&forward)?;
    }

    while current > settings.infidelity_tol && iterations < settings.max_iter {
        let gnorm = norm(&grad);
        if gnorm <= settings.gradient_tol {
            notes.push(format!("gradient norm {gnorm:.3e} below tolerance"));
            break;
        }
        let (direction, mut step, armijo) = match settings.rule {
            StepRule::Gradient => (grad.map(|g| -g), eta, false),
            StepRule::Lbfgs => {
                let mut d = memory.direction(&grad);
                if dot(&d, &grad) >= 0.0 {
                    memory = LbfgsMemory::default();
                    d = grad.map(|g| -g);
                }
                let cap = LBFGS_MAX_STEP / norm(&d);
                (d, cap.min(1.0), true)
            }
        };
        let slope = dot(&direction, &grad);
        let lambda = forward.costate;
        let accepted = loop {
            let trial = CostateCoords(std::array::from_fn(|k| lambda.0[k] + step * direction[k]));
            match problem.solve(&trial) {
                Ok(sol) => {
                    let value = infidelity(sol.final_unitary(), &problem.target);
                    let limit = if armijo { current + 1e-4 * step * slope } else { current };
                    if value <= limit || (armijo && value <= current && step < 1e-6) {
                        break Some((sol, value));
                    }
                }
                Err(Error::IntegrationAccuracy { .. }) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
            if settings.rule == StepRule::Gradient {
                eta = step;
                streak = 0;
            }
            if step < 1e-14 {
                break None;
            }
        };
        let Some((sol, value)) = accepted else {
            notes.push("step size underflow: no descent direction at working precision".into());
            break;
        };
        iterations += 1;
        forward = sol;
        current = value;
        trace.push(current);
        if iterations > STALL_WINDOW {
            let past = trace[trace.len() - 1 - STALL_WINDOW];
            if past - current <= STALL_TOL * past {
                notes.push(format!("stalled: infidelity changed by < {STALL_TOL:e} (relative) over {STALL_WINDOW} iterations"));
                break;
            }
        }
        if settings.rule == StepRule::Gradient {
            streak += 1;
            if streak >= 3 {
                eta = (eta * 1.2).min(settings.eta);
                streak = 0;
            }
        }
        if current > settings.infidelity_tol {
            let new_grad = problem.gradient_from(&forward)?;
            if settings.rule == StepRule::Lbfgs {
                let s_k = std::array::from_fn(|k| forward.costate.0[k] - lambda.0[k]);
                let y_k = std::array::from_fn(|k| new_grad[k] - grad[k]);
                memory.push(s_k, y_k);
            }
            grad = new_grad;
        }
    }
    let converged = current <= settings.infidelity_tol;
    if !converged && iterations >= settings.max_iter {
        notes.push(format!("max_iter {} reached", settings.max_iter));
    }
    Ok(problem.report(Method::Variational, &forward, iterations, settings.seed, converged, trace, notes))
}

/// A run stops as stalled when the infidelity improves by less than
/// `STALL_TOL` (relative) over `STALL_WINDOW` accepted steps.
pub const STALL_WINDOW: usize = 50;
pub const STALL_TOL: f64 = 1e-9;

/// Correction pairs kept by the L-BFGS rule.
pub const LBFGS_MEMORY: usize = 10;

/// Longest L-BFGS trial step in costate coordinates (units of 1/τ).
pub const LBFGS_MAX_STEP: f64 = 1.0;

fn dot(a: &Coords, b: &Coords) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &Coords) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Default)]
struct LbfgsMemory {
    pairs: std::collections::VecDeque<(Coords, Coords, f64)>,
}

impl LbfgsMemory {
    fn push(&mut self, s: Coords, y: Coords) {
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if self.pairs.len() == LBFGS_MEMORY {
                self.pairs.pop_front();
            }
            self.pairs.push_back((s, y, 1.0 / sy));
        }
    }

    /// −H·g by the two-loop recursion.
    fn direction(&self, grad: &Coords) -> Coords {
        let mut q = *grad;
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for k in 0..DIM {
                q[k] -= a * y[k];
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q = q.map(|v| v * gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for k in 0..DIM {
                q[k] += (a - b) * s[k];
            }
        }
        q.map(|v| -v)
    }
}

/// Picks the converged report with the lowest energy, else the lowest
/// infidelity; ties go to the earlier index.
pub(crate) fn select_best(reports: Vec<OptimizationReport>) -> Option<OptimizationReport> {
    reports.into_iter().reduce(|best, r| {
        let better = match (best.converged, r.converged) {
            (false, true) => true,
            (true, false) => false,
            (true, true) => r.energy < best.energy,
            (false, false) => r.infidelity < best.infidelity,
        };
        if better {
            r
        } else {
            best
        }
    })
}

/// Learns Λ(0) from `settings.starts` seeded random initializations run in
/// parallel, keeping the best report (see [`DescentSettings::starts`]).
pub fn learn_lambda(problem: &GeodesicProblem, settings: &DescentSettings) -> Result<OptimizationReport> {
    settings.validate()?;
    let reports = (0..settings.starts)
        .into_par_iter()
        .map(|i| {
            let seed = settings.seed.wrapping_add(i as u64);
            let run = DescentSettings { seed, ..*settings };
            descend_from(problem, random_costate(seed, settings.init_scale), &run)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(select_best(reports).expect("at least one start"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{hermiticity_defect, Axis};
    use crate::model::drift_hamiltonian;

    fn paper_drift() -> HermitianOperator {
        drift_hamiltonian(crate::model::PhysicalParams::default().j_zz() * 40e-9)
    }

    fn problem(target: GateTarget, dist: Distribution) -> GeodesicProblem {
        GeodesicProblem::new(target, paper_drift(), dist, DEFAULT_GEODESIC_STEPS).unwrap()
    }

    #[test]
    fn terminal_costate_vanishes_at_target() {
        let cx = GateTarget::cx();
        for phi in [0.0, 0.4, -2.2] {
            let u = cx.matrix() * C64::from_polar(1.0, phi);
            assert!(terminal_costate(&u, &cx).norm() < 1e-15);
        }
    }

    #[test]
    fn terminal_costate_is_hermitian_traceless() {
        for seed in 0..5 {
            let u = HermitianOperator::from_coords(&random_costate(seed, 2.0).0).propagator(1.0);
            let g = terminal_costate(&u, &GateTarget::r());
            assert!(hermiticity_defect(g.matrix()) < 1e-12);
            assert!(g.trace().abs() < 1e-12);
            assert!(g.norm() > 0.0);
        }
    }

    #[test]
    fn gradient_rejects_mismatched_grids() {
        let p = problem(GateTarget::cz(), Distribution::full());
        let a = p.solve(&CostateCoords::zero()).unwrap();
        let other = GeodesicProblem { grid: TimeGrid::unit(1000).unwrap(), ..p.clone() };
        let b = other.solve(&CostateCoords::zero()).unwrap();
        let gammas = propagate_adjoint_backward(&b, &terminal_costate(b.final_unitary(), &p.target), &p.drift, &p.dist).unwrap();
        assert!(gradient(&a.trajectory, &gammas, &p.dist).is_err());
    }

    #[test]
    fn zero_terminal_costate_gives_zero_gradient() {
        let p = problem(GateTarget::cx(), Distribution::full());
        let sol = p.solve(&random_costate(4, 1.0)).unwrap();
        let gammas = propagate_adjoint_backward(&sol, &HermitianOperator::zero(), &p.drift, &p.dist).unwrap();
        assert!(gradient(&sol.trajectory, &gammas, &p.dist).unwrap().iter().all(|g| *g == 0.0));
    }

    fn check_gradient_against_finite_differences(p: &GeodesicProblem, lambda: CostateCoords) {
        let analytic = p.gradient_at(&lambda).unwrap();
        let h = 1e-5;
        for k in 0..DIM {
            let mut plus = lambda;
            let mut minus = lambda;
            plus.0[k] += h;
            minus.0[k] -= h;
            let fd = (p.infidelity_at(&plus).unwrap() - p.infidelity_at(&minus).unwrap()) / (2.0 * h);
            if analytic[k].abs() > 1e-8 {
                let rel = (analytic[k] - fd).abs() / analytic[k].abs();
                assert!(rel < 1e-3, "k={k} analytic={} fd={fd} rel={rel}", analytic[k]);
            } else {
                assert!(fd.abs() < 1e-6, "k={k} fd={fd}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = problem(GateTarget::cx(), Distribution::full());
        check_gradient_against_finite_differences(&p, random_costate(17, 1.5));
        let p = problem(GateTarget::r(), Distribution::without(Axis::Y));
        check_gradient_against_finite_differences(&p, random_costate(18, 1.5));
    }

    #[test]
    fn drift_target_converges_immediately() {
        let drift = paper_drift();
        let target = GateTarget::custom("drift", drift.propagator(1.0)).unwrap();
        // RK4 at 2000 steps leaves ~2e-11 of integrator error on this target
        let p = GeodesicProblem::new(target, drift, Distribution::full(), 5000).unwrap();
        let settings = DescentSettings { init_scale: 0.0, starts: 1, ..Default::default() };
        let report = learn_lambda(&p, &settings).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 0);
        assert!(report.infidelity <= 1e-12, "{}", report.infidelity);
        assert_eq!(report.energy, 0.0);
    }

    #[test]
    fn descent_is_monotone_with_backtracking() {
        let p = problem(GateTarget::cz(), Distribution::full());
        for rule in [StepRule::Gradient, StepRule::Lbfgs] {
            let settings = DescentSettings { eta: 0.9, max_iter: 40, rule, ..Default::default() };
            let report = descend_from(&p, random_costate(2, 1.0), &settings).unwrap();
            assert!(report.infidelity_trace.windows(2).all(|w| w[1] <= w[0]));
            assert!(report.infidelity_trace.last().unwrap() < &report.infidelity_trace[0]);
        }
    }

    #[test]
    fn cx_full_reaches_reference_energy() {
        let p = problem(GateTarget::cx(), Distribution::full());
        let report = learn_lambda(&p, &DescentSettings::default()).unwrap();
        assert!(report.converged && report.infidelity <= 1e-6);
        assert!((report.energy / 3.41619 - 1.0).abs() <= 0.05, "{}", report.energy);
        assert!(report.controls.respects(&p.dist));
    }

    #[test]
    fn global_phase_of_target_changes_nothing() {
        let p = problem(GateTarget::r(), Distribution::without(Axis::X));
        let q = GeodesicProblem { target: p.target.with_global_phase(1.234), ..p.clone() };
        let lambda = random_costate(9, 1.0);
        let (a, b) = (p.gradient_at(&lambda).unwrap(), q.gradient_at(&lambda).unwrap());
        for k in 0..DIM {
            assert!((a[k] - b[k]).abs() <= 1e-10 * (1.0 + a[k].abs()));
        }
    }

    #[test]
    fn learn_lambda_keeps_lowest_energy_converged_start() {
        let p = problem(GateTarget::cx(), Distribution::full());
        let settings = DescentSettings { starts: 3, ..Default::default() };
        let best = learn_lambda(&p, &settings).unwrap();
        for i in 0..3 {
            let run = DescentSettings { seed: settings.seed + i, ..settings };
            let r = descend_from(&p, random_costate(run.seed, 1.0), &run).unwrap();
            if r.converged {
                assert!(best.energy <= r.energy);
            }
        }
    }

    #[test]
    fn settings_validation() {
        assert!(DescentSettings { eta: 1.0, ..Default::default() }.validate().is_err());
        assert!(DescentSettings { eta: 0.0, ..Default::default() }.validate().is_err());
        assert!(DescentSettings::default().validate().is_ok());
    }

    #[test]
    fn random_costate_is_seeded() {
        assert_eq!(random_costate(5, 1.0), random_costate(5, 1.0));
        assert_ne!(random_costate(5, 1.0), random_costate(6, 1.0));
        assert!(random_costate(5, 0.3).0.iter().all(|c| c.abs() <= 0.3));
    }
}
