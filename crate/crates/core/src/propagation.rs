//! Time integrators for the linear, geodesic and adjoint equations.
//!
//! * Linear Schrödinger equation i dU/dt = H(t)U: exponential midpoint rule
//!   (second-order Magnus), unitary to rounding at any step size.
//!   [`propagate_in_frame`] integrates in the interaction picture of a
//!   closed-form frame unitary, which is how the stiff CDD drive is handled.
//! * Geodesic equation i dU/dt = {H_d + P[UΛ(0)U†]}U: classical RK4.
//! * Adjoint equation for Γ(t), backward from t1 to t0: classical RK4 on the
//!   forward grid, using U at half steps from cubic Hermite interpolation of
//!   the stored forward solution.
//!
//! Geodesic and adjoint paths are never re-unitarized; accuracy is enforced
//! by the step count plus a drift check on the result.

use serde::{Deserialize, Serialize};

use crate::algebra::{
    control_matrix, hermiticity_defect, unitarity_defect, CostateCoords, Distribution,
    HermitianOperator, Mat4, C64,
};
use crate::algebra::expm_hermitian_matrix;
use crate::error::{invalid, Error, Result};
use crate::metrics::ControlTrajectory;
use crate::model::{cdd_unitary, PhysicalParams, TWO_PI};
use rayon::prelude::*;

/// Largest ‖U†U − I‖_F tolerated on a returned trajectory.
pub const UNITARITY_LIMIT: f64 = 1e-8;

/// Largest relative ‖Γ − Γ†‖_F tolerated on a returned adjoint trajectory.
pub const HERMITICITY_LIMIT: f64 = 1e-8;

const MINUS_I: C64 = C64::new(0.0, -1.0);

/// Uniform time grid with `n_steps` intervals over [t0, t1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    n_steps: usize,
    t0: f64,
    t1: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, t0: f64, t1: f64) -> Result<Self> {
        if n_steps < 2 {
            return Err(invalid(format!("time grid needs at least 2 steps, got {n_steps}")));
        }
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(invalid(format!("time grid endpoints must satisfy t0 < t1, got [{t0}, {t1}]")));
        }
        Ok(TimeGrid { n_steps, t0, t1 })
    }

    /// [0, 1], the optimizers' dimensionless gate interval.
    pub fn unit(n_steps: usize) -> Result<Self> {
        Self::new(n_steps, 0.0, 1.0)
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn span(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn dt(&self) -> f64 {
        self.span() / self.n_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t1
        } else {
            self.t0 + self.dt() * i as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.node(i))
    }

    /// The same node layout with times multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.n_steps, self.t0 * factor, self.t1 * factor)
    }
}

/// A unitary at every node of a grid, starting from the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryTrajectory {
    grid: TimeGrid,
    unitaries: Vec<Mat4>,
}

impl UnitaryTrajectory {
    pub fn new(grid: TimeGrid, unitaries: Vec<Mat4>) -> Result<Self> {
        if unitaries.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} unitaries for a grid of {} nodes",
                unitaries.len(),
                grid.len()
            )));
        }
        Ok(UnitaryTrajectory { grid, unitaries })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn unitaries(&self) -> &[Mat4] {
        &self.unitaries
    }

    pub fn at(&self, i: usize) -> &Mat4 {
        &self.unitaries[i]
    }

    pub fn final_unitary(&self) -> &Mat4 {
        self.unitaries.last().expect("trajectory is never empty")
    }

    /// Largest unitarity defect over all nodes.
    pub fn max_unitarity_defect(&self) -> f64 {
        self.unitaries.iter().map(unitarity_defect).fold(0.0, f64::max)
    }
}

fn check_unitary(u: &Mat4) -> Result<()> {
    let drift = unitarity_defect(u);
    if drift.is_finite() && drift <= UNITARITY_LIMIT {
        Ok(())
    } else {
        Err(Error::IntegrationAccuracy { quantity: "unitarity", drift, limit: UNITARITY_LIMIT })
    }
}

/// Integrates i dU/dt = H(t)U from the identity with the exponential
/// midpoint rule U_{n+1} = exp(−iH(t_{n+½})Δt)U_n.
pub fn propagate_linear<F>(hamiltonian: F, grid: &TimeGrid) -> Result<UnitaryTrajectory>
where
    F: Fn(f64) -> HermitianOperator,
{
    let dt = grid.dt();
    let mut unitaries = Vec::with_capacity(grid.len());
    let mut u = Mat4::identity();
    unitaries.push(u);
    for n in 0..grid.n_steps() {
        let h = hamiltonian(grid.node(n) + 0.5 * dt);
        u = expm_hermitian_matrix(h.matrix(), dt) * u;
        unitaries.push(u);
    }
    check_unitary(&u)?;
    UnitaryTrajectory::new(*grid, unitaries)
}

/// As [`propagate_linear`], keeping only U(t1).
pub fn propagate_linear_final<F>(hamiltonian: F, grid: &TimeGrid) -> Result<Mat4>
where
    F: Fn(f64) -> HermitianOperator,
{
    let dt = grid.dt();
    let mut u = Mat4::identity();
    for n in 0..grid.n_steps() {
        let h = hamiltonian(grid.node(n) + 0.5 * dt);
        u = expm_hermitian_matrix(h.matrix(), dt) * u;
    }
    check_unitary(&u)?;
    Ok(u)
}

/// Steps per independently multiplied block in [`propagate_in_frame`]. Fixed
/// so that the rounding pattern does not depend on the thread count.
const FRAME_BLOCK_STEPS: usize = 4096;

/// U(t1) for i dU/dt = [H_F(t) + H(t)]U, U(t0) = I, where H_F generates the
/// known unitary `frame` (i dF/dt = H_F F).
///
/// Writes U = F·W and integrates i dW/dt = F†HF·W with the exponential
/// midpoint rule, so the frame itself contributes no discretization error.
/// Blocks of steps are multiplied out in parallel and combined in order.
pub fn propagate_in_frame<F, H>(frame: F, hamiltonian: H, grid: &TimeGrid) -> Result<Mat4>
where
    F: Fn(f64) -> Mat4 + Sync,
    H: Fn(f64) -> HermitianOperator + Sync,
{
    propagate_in_frame_with(frame, hamiltonian, |_| Mat4::zeros(), grid)
}

/// As [`propagate_in_frame`], plus a term `in_frame` that is already
/// expressed in the frame: i dW/dt = [F†HF + K(t)]·W. The lab-frame
/// Hamiltonian is then H_F + H + F·K·F†.
pub fn propagate_in_frame_with<F, H, K>(frame: F, hamiltonian: H, in_frame: K, grid: &TimeGrid) -> Result<Mat4>
where
    F: Fn(f64) -> Mat4 + Sync,
    H: Fn(f64) -> HermitianOperator + Sync,
    K: Fn(f64) -> Mat4 + Sync,
{
    let dt = grid.dt();
    let n = grid.n_steps();
    let step = |i: usize| {
        let t = grid.node(i) + 0.5 * dt;
        let f = frame(t);
        let rotated = f.adjoint() * hamiltonian(t).matrix() * f + in_frame(t);
        let rotated = (rotated + rotated.adjoint()) * C64::from(0.5);
        expm_hermitian_matrix(&rotated, dt)
    };
    let blocks: Vec<Mat4> = (0..n.div_ceil(FRAME_BLOCK_STEPS))
        .into_par_iter()
        .map(|b| {
            let end = ((b + 1) * FRAME_BLOCK_STEPS).min(n);
            (b * FRAME_BLOCK_STEPS..end).fold(Mat4::identity(), |acc, i| step(i) * acc)
        })
        .collect();
    let w = blocks.iter().fold(frame(grid.t0()).adjoint(), |acc, b| b * acc);
    let u = frame(grid.t1()) * w;
    check_unitary(&u)?;
    Ok(u)
}

/// Number of exponential-midpoint steps over `span` seconds that gives
/// `steps_per_period` steps per period of the fastest CDD component (16ω).
pub fn cdd_step_count(span: f64, omega: f64, steps_per_period: usize) -> usize {
    let fast_periods = span * 16.0 * omega / TWO_PI;
    ((fast_periods * steps_per_period as f64).ceil() as usize).max(2)
}

/// U_id = exp(−iH_d τ), the ideal CDD outcome.
pub fn cdd_ideal_unitary(params: &PhysicalParams) -> Mat4 {
    params.drift_hamiltonian().propagator(params.tau)
}

/// U_tst(τ) for i dU/dt = [H_N + H_CDD(t)]U, or H_N alone when `omega` is
/// `None`.
///
/// The drive is handled in the frame of the closed-form U_CDD, so only
/// U_CDD†H_N U_CDD is integrated numerically.
pub fn cdd_test_unitary(
    params: &PhysicalParams,
    omega: Option<f64>,
    steps_per_period: usize,
) -> Result<Mat4> {
    params.validate()?;
    let h_n = params.native_hamiltonian();
    match omega {
        None => Ok(h_n.propagator(params.tau)),
        Some(w) => {
            if !(w > 0.0 && w.is_finite()) {
                return Err(invalid(format!("CDD frequency must be positive, got {w}")));
            }
            let grid = TimeGrid::new(cdd_step_count(params.tau, w, steps_per_period), 0.0, params.tau)?;
            propagate_in_frame(|t| cdd_unitary(t, w), |_| h_n, &grid)
        }
    }
}

/// U_CDD†(τ)·V(τ) for the combined Hamiltonian
/// H_N + H_CDD(t) + U_CDD(t)H_c(t)U_CDD†(t), with `controls` in rad/s on a
/// grid over [0, τ] (linearly interpolated between nodes).
///
/// In the CDD frame the control term is H_c(t) itself, so this is the
/// frame-picture propagator W(τ).
pub fn full_stack_unitary(
    params: &PhysicalParams,
    omega: f64,
    controls: &ControlTrajectory,
    steps_per_period: usize,
) -> Result<Mat4> {
    params.validate()?;
    let cg = controls.grid();
    if (cg.t0()).abs() > 1e-12 * params.tau || (cg.t1() - params.tau).abs() > 1e-9 * params.tau {
        return Err(Error::GridMismatch(format!(
            "controls span [{}, {}] s but the gate time is {} s",
            cg.t0(),
            cg.t1(),
            params.tau
        )));
    }
    let h_n = params.native_hamiltonian();
    let grid = TimeGrid::new(cdd_step_count(params.tau, omega, steps_per_period), 0.0, params.tau)?;
    let u = propagate_in_frame_with(|t| cdd_unitary(t, omega), |_| h_n, |t| controls.hamiltonian_at(t), &grid)?;
    Ok(cdd_unitary(params.tau, omega).adjoint() * u)
}

/// Right-hand side of the geodesic equation for a fixed Λ(0).
struct GeodesicRhs {
    drift: Mat4,
    costate: Mat4,
    dist: Distribution,
}

impl GeodesicRhs {
    fn new(lambda0: &CostateCoords, drift: &HermitianOperator, dist: &Distribution) -> Self {
        GeodesicRhs { drift: *drift.matrix(), costate: *lambda0.operator().matrix(), dist: *dist }
    }

    /// Controls ⟨g_c, UΛU†⟩ at `u`.
    fn controls(&self, u: &Mat4) -> [f64; 6] {
        self.dist.amplitudes(&(u * self.costate * u.adjoint()))
    }

    /// (dU/dt, controls at U).
    fn eval(&self, u: &Mat4) -> (Mat4, [f64; 6]) {
        let h = self.controls(u);
        let a = self.drift + control_matrix(&h);
        ((a * u) * MINUS_I, h)
    }

    fn derivative(&self, u: &Mat4) -> Mat4 {
        self.eval(u).0
    }

    fn rk4_step(&self, u: &Mat4, k1: &Mat4, dt: f64) -> Mat4 {
        let half = C64::from(0.5 * dt);
        let k2 = self.derivative(&(u + k1 * half));
        let k3 = self.derivative(&(u + k2 * half));
        let k4 = self.derivative(&(u + k3 * C64::from(dt)));
        u + (k1 + (k2 + k3) * C64::from(2.0) + k4) * C64::from(dt / 6.0)
    }
}

/// Forward geodesic solution with everything the adjoint pass needs.
#[derive(Debug, Clone)]
pub struct GeodesicSolution {
    pub trajectory: UnitaryTrajectory,
    /// U(t_{n+½}) for n = 0..n_steps, by cubic Hermite interpolation.
    pub midpoints: Vec<Mat4>,
    /// h^k(t) = ⟨g_k, P[U(t)Λ(0)U†(t)]⟩ on the grid nodes.
    pub controls: ControlTrajectory,
    pub costate: CostateCoords,
}

impl GeodesicSolution {
    pub fn final_unitary(&self) -> &Mat4 {
        self.trajectory.final_unitary()
    }
}

/// Integrates i dU/dt = {H_d + P[UΛ(0)U†]}U over `grid` with RK4.
pub fn propagate_geodesic(
    lambda0: &CostateCoords,
    drift: &HermitianOperator,
    dist: &Distribution,
    grid: &TimeGrid,
) -> Result<GeodesicSolution> {
    if !lambda0.is_finite() {
        return Err(invalid("costate coordinates must be finite"));
    }
    let rhs = GeodesicRhs::new(lambda0, drift, dist);
    let dt = grid.dt();
    let n = grid.n_steps();
    let mut unitaries = Vec::with_capacity(n + 1);
    let mut derivatives = Vec::with_capacity(n + 1);
    let mut samples = Vec::with_capacity(n + 1);

    let mut u = Mat4::identity();
    let (mut k1, mut h) = rhs.eval(&u);
    for _ in 0..n {
        unitaries.push(u);
        derivatives.push(k1);
        samples.push(h);
        u = rhs.rk4_step(&u, &k1, dt);
        (k1, h) = rhs.eval(&u);
    }
    unitaries.push(u);
    derivatives.push(k1);
    samples.push(h);
    check_unitary(&u)?;

    let eighth = C64::from(dt / 8.0);
    let midpoints = (0..n)
        .map(|i| {
            (unitaries[i] + unitaries[i + 1]) * C64::from(0.5)
                + (derivatives[i] - derivatives[i + 1]) * eighth
        })
        .collect();

    Ok(GeodesicSolution {
        trajectory: UnitaryTrajectory::new(*grid, unitaries)?,
        midpoints,
        controls: ControlTrajectory::new(*grid, samples)?,
        costate: *lambda0,
    })
}

/// U(t1) of the geodesic equation without storing the path.
pub fn geodesic_endpoint(
    lambda0: &CostateCoords,
    drift: &HermitianOperator,
    dist: &Distribution,
    grid: &TimeGrid,
) -> Result<Mat4> {
    if !lambda0.is_finite() {
        return Err(invalid("costate coordinates must be finite"));
    }
    let rhs = GeodesicRhs::new(lambda0, drift, dist);
    let dt = grid.dt();
    let mut u = Mat4::identity();
    for _ in 0..grid.n_steps() {
        let k1 = rhs.derivative(&u);
        u = rhs.rk4_step(&u, &k1, dt);
    }
    check_unitary(&u)?;
    Ok(u)
}

/// Γ(t) on the nodes of the forward grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CostateTrajectory {
    grid: TimeGrid,
    gammas: Vec<Mat4>,
}

impl CostateTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn gammas(&self) -> &[Mat4] {
        &self.gammas
    }

    pub fn at(&self, i: usize) -> &Mat4 {
        &self.gammas[i]
    }
}

/// Coefficients of the adjoint equation at one instant: L = UΛ(0)U† and
/// A = H_d + P[L].
struct AdjointCoefficients {
    l: Mat4,
    a: Mat4,
}

impl AdjointCoefficients {
    fn at(u: &Mat4, costate: &Mat4, drift: &Mat4, dist: &Distribution) -> Self {
        let l = u * costate * u.adjoint();
        let a = drift + dist.project_matrix(&l);
        AdjointCoefficients { l, a }
    }

    /// dΓ/dt = −i([A, Γ] + [P[Γ], L]).
    fn rhs(&self, gamma: &Mat4, dist: &Distribution) -> Mat4 {
        let pg = dist.project_matrix(gamma);
        (self.a * gamma - gamma * self.a + pg * self.l - self.l * pg) * MINUS_I
    }
}

/// Integrates i dΓ/dt = [H_d + P[UΛU†], Γ] + [P[Γ], UΛU†] backward from
/// Γ(t1) = `gamma_final` to t0 with RK4 on the forward grid.
pub fn propagate_adjoint_backward(
    forward: &GeodesicSolution,
    gamma_final: &HermitianOperator,
    drift: &HermitianOperator,
    dist: &Distribution,
) -> Result<CostateTrajectory> {
    let grid = *forward.trajectory.grid();
    let n = grid.n_steps();
    if forward.midpoints.len() != n {
        return Err(Error::GridMismatch(format!(
            "{} midpoints for {} steps",
            forward.midpoints.len(),
            n
        )));
    }
    let costate = *forward.costate.operator().matrix();
    let drift = *drift.matrix();
    let coeff = |u: &Mat4| AdjointCoefficients::at(u, &costate, &drift, dist);

    let h = -grid.dt();
    let half = C64::from(0.5 * h);
    let mut gammas = vec![Mat4::zeros(); n + 1];
    let mut gamma = *gamma_final.matrix();
    gammas[n] = gamma;
    let mut upper = coeff(forward.trajectory.at(n));
    for i in (0..n).rev() {
        let mid = coeff(&forward.midpoints[i]);
        let lower = coeff(forward.trajectory.at(i));
        let k1 = upper.rhs(&gamma, dist);
        let k2 = mid.rhs(&(gamma + k1 * half), dist);
        let k3 = mid.rhs(&(gamma + k2 * half), dist);
        let k4 = lower.rhs(&(gamma + k3 * C64::from(h)), dist);
        gamma += (k1 + (k2 + k3) * C64::from(2.0) + k4) * C64::from(h / 6.0);
        gammas[i] = gamma;
        upper = lower;
    }

    let scale = gamma_final.norm().max(gammas[0].norm());
    if scale > 0.0 {
        let drift = gammas.iter().map(hermiticity_defect).fold(0.0, f64::max) / scale;
        if !(drift <= HERMITICITY_LIMIT) {
            return Err(Error::IntegrationAccuracy {
                quantity: "adjoint Hermiticity",
                drift,
                limit: HERMITICITY_LIMIT,
            });
        }
    }
    Ok(CostateTrajectory { grid, gammas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{expm_hermitian, Axis, GeneratorBasis};
    use crate::metrics::infidelity;
    use crate::model::{cdd_hamiltonian, cz_hamiltonian, GateTarget};

    fn sample_costate(seed: u64, scale: f64) -> CostateCoords {
        // small LCG keeps these tests free of RNG plumbing
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        CostateCoords(std::array::from_fn(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            scale * (((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0)
        }))
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::unit(1).is_err());
        assert!(TimeGrid::new(10, 1.0, 1.0).is_err());
        let g = TimeGrid::unit(4).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g.node(4), 1.0);
        assert_eq!(g.nodes().collect::<Vec<_>>(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn zero_hamiltonian_gives_identity() {
        let grid = TimeGrid::unit(10).unwrap();
        let traj = propagate_linear(|_| HermitianOperator::zero(), &grid).unwrap();
        assert!(traj.unitaries().iter().all(|u| (u - Mat4::identity()).norm() == 0.0));
    }

    #[test]
    fn constant_cz_hamiltonian_reaches_cz() {
        let tau = 40e-9;
        let grid = TimeGrid::new(200, 0.0, tau).unwrap();
        let h = cz_hamiltonian(tau);
        let traj = propagate_linear(|_| h, &grid).unwrap();
        assert!((traj.final_unitary() - GateTarget::cz().matrix()).norm() < 1e-8);
    }

    #[test]
    fn exponential_midpoint_is_second_order_and_unitary() {
        let h = |t: f64| {
            HermitianOperator::pauli_term(1, 0, 3.0 * t.cos())
                + HermitianOperator::pauli_term(3, 3, 2.0)
                + HermitianOperator::pauli_term(0, 2, 1.5 * (2.0 * t).sin())
        };
        let reference = propagate_linear_final(h, &TimeGrid::unit(400).unwrap()).unwrap();
        let err = |n| (propagate_linear_final(h, &TimeGrid::unit(n).unwrap()).unwrap() - reference).norm();
        let ratio = err(20) / err(40);
        assert!((3.3..4.7).contains(&ratio), "ratio {ratio}");
        let coarse = propagate_linear(h, &TimeGrid::unit(3).unwrap()).unwrap();
        assert!(coarse.max_unitarity_defect() < 1e-14);
    }

    #[test]
    fn frame_propagation_matches_direct_propagation() {
        // H_F = ω(Z⊗I) generates F = exp(−iωt Z⊗I).
        let omega = 7.0;
        let hf = HermitianOperator::pauli_term(3, 0, omega);
        let rest = HermitianOperator::pauli_term(1, 1, 0.8) + HermitianOperator::pauli_term(2, 0, 0.3);
        let grid = TimeGrid::unit(20000).unwrap();
        let direct = propagate_linear_final(|_| hf + rest, &grid).unwrap();
        let framed = propagate_in_frame(|t| expm_hermitian(&hf, t), |_| rest, &TimeGrid::unit(2000).unwrap()).unwrap();
        assert!((direct - framed).norm() < 1e-6, "{}", (direct - framed).norm());
    }

    #[test]
    fn zero_costate_follows_drift() {
        let drift = HermitianOperator::pauli_term(2, 2, 1.3) + HermitianOperator::pauli_term(3, 3, 1.3);
        let grid = TimeGrid::unit(2000).unwrap();
        let sol = propagate_geodesic(&CostateCoords::zero(), &drift, &Distribution::full(), &grid).unwrap();
        assert!(sol.controls.samples().iter().flatten().all(|h| *h == 0.0));
        assert!((sol.final_unitary() - expm_hermitian(&drift, 1.0)).norm() < 1e-10);
    }

    #[test]
    fn commuting_costate_gives_constant_controls() {
        let a = 1.9;
        let mut c = [0.0; 15];
        c[GeneratorBasis::index_of(1, 0)] = a;
        let grid = TimeGrid::unit(1000).unwrap();
        let sol = propagate_geodesic(&CostateCoords(c), &HermitianOperator::zero(), &Distribution::full(), &grid).unwrap();
        let expected = expm_hermitian(&HermitianOperator::pauli_term(1, 0, a), 1.0);
        assert!((sol.final_unitary() - expected).norm() < 1e-10);
        for s in sol.controls.samples() {
            assert!((s[0] - a).abs() < 1e-12);
            assert!(s[1..].iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn geodesic_initial_controls_are_projected_costate() {
        let lambda = sample_costate(3, 2.0);
        let drift = HermitianOperator::pauli_term(3, 3, 4.0);
        for dist in [Distribution::full(), Distribution::without(Axis::X)] {
            let sol = propagate_geodesic(&lambda, &drift, &dist, &TimeGrid::unit(500).unwrap()).unwrap();
            let h0 = sol.controls.samples()[0];
            let mask = dist.channel_mask();
            for c in 0..6 {
                let slot = if c < 3 { GeneratorBasis::index_of(c + 1, 0) } else { GeneratorBasis::index_of(0, c - 2) };
                let expected = if mask[c] { lambda.0[slot] } else { 0.0 };
                assert!((h0[c] - expected).abs() < 1e-14);
            }
            assert!(sol.controls.respects(&dist));
        }
    }

    #[test]
    fn geodesic_conserves_costate_norm_and_unitarity() {
        let lambda = sample_costate(11, 3.0);
        let drift = HermitianOperator::pauli_term(2, 2, 10.0) + HermitianOperator::pauli_term(3, 3, 10.0);
        let sol = propagate_geodesic(&lambda, &drift, &Distribution::full(), &TimeGrid::unit(2000).unwrap()).unwrap();
        let l0 = *lambda.operator().matrix();
        let n0 = l0.norm();
        for u in sol.trajectory.unitaries() {
            assert!(((u * l0 * u.adjoint()).norm() - n0).abs() < 1e-8);
        }
        assert!(sol.trajectory.max_unitarity_defect() < 1e-8);
        let end = geodesic_endpoint(&lambda, &drift, &Distribution::full(), &TimeGrid::unit(2000).unwrap()).unwrap();
        assert!((end - sol.final_unitary()).norm() < 1e-14);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let lambda = sample_costate(5, 2.0);
        let drift = HermitianOperator::pauli_term(2, 2, 5.0) + HermitianOperator::pauli_term(3, 3, 5.0);
        let dist = Distribution::full();
        let end = |n| geodesic_endpoint(&lambda, &drift, &dist, &TimeGrid::unit(n).unwrap()).unwrap();
        let reference = end(10240);
        let ratio = (end(640) - reference).norm() / (end(1280) - reference).norm();
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn coarse_geodesic_reports_accuracy_error() {
        let lambda = sample_costate(2, 40.0);
        let drift = HermitianOperator::pauli_term(3, 3, 10.0);
        let err = geodesic_endpoint(&lambda, &drift, &Distribution::full(), &TimeGrid::unit(4).unwrap());
        assert!(matches!(err, Err(Error::IntegrationAccuracy { .. })));
    }

    #[test]
    fn adjoint_trivial_cases() {
        let grid = TimeGrid::unit(100).unwrap();
        let dist = Distribution::full();
        let drift = HermitianOperator::pauli_term(3, 3, 2.0);
        let sol = propagate_geodesic(&sample_costate(1, 1.0), &drift, &dist, &grid).unwrap();
        let gammas = propagate_adjoint_backward(&sol, &HermitianOperator::zero(), &drift, &dist).unwrap();
        assert!(gammas.gammas().iter().all(|g| g.norm() == 0.0));

        let zero = HermitianOperator::zero();
        let sol = propagate_geodesic(&CostateCoords::zero(), &zero, &dist, &grid).unwrap();
        let gamma_final = HermitianOperator::pauli_term(1, 2, 0.7) + HermitianOperator::pauli_term(3, 0, -0.2);
        let gammas = propagate_adjoint_backward(&sol, &gamma_final, &zero, &dist).unwrap();
        assert!(gammas.gammas().iter().all(|g| (g - gamma_final.matrix()).norm() < 1e-15));
    }

    #[test]
    fn adjoint_conserves_trace_and_hermiticity() {
        let grid = TimeGrid::unit(2000).unwrap();
        let dist = Distribution::without(Axis::Y);
        let drift = HermitianOperator::pauli_term(2, 2, 6.0) + HermitianOperator::pauli_term(3, 3, 6.0);
        let sol = propagate_geodesic(&sample_costate(8, 2.0), &drift, &dist, &grid).unwrap();
        let gamma_final = HermitianOperator::from_coords(&sample_costate(9, 1.0).0)
            + HermitianOperator::new(Mat4::identity() * C64::from(0.3)).unwrap();
        let gammas = propagate_adjoint_backward(&sol, &gamma_final, &drift, &dist).unwrap();
        for g in gammas.gammas() {
            assert!((g.trace().re - gamma_final.trace()).abs() < 1e-10);
            assert!(g.trace().im.abs() < 1e-10);
            assert!(hermiticity_defect(g) < 1e-10);
        }
    }

    #[test]
    fn drift_alone_misses_cz() {
        let drift = HermitianOperator::pauli_term(3, 3, 1.0);
        let u = geodesic_endpoint(&CostateCoords::zero(), &drift, &Distribution::full(), &TimeGrid::unit(200).unwrap()).unwrap();
        assert!(infidelity(&u, &GateTarget::cz()) > 0.1);
    }

    #[test]
    fn cdd_bench_without_drive() {
        let params = PhysicalParams::default();
        let u = cdd_test_unitary(&params, None, 64).unwrap();
        let f = crate::metrics::cdd_fidelity(&cdd_ideal_unitary(&params), &u);
        assert!((f - 0.62568233).abs() < 1e-6, "{f}");
    }

    #[test]
    fn cdd_bench_at_2ghz() {
        let params = PhysicalParams::default();
        let omega = TWO_PI * 2.0e9;
        assert_eq!(cdd_step_count(params.tau, omega, 64), 81920);
        let u = cdd_test_unitary(&params, Some(omega), 64).unwrap();
        let f = crate::metrics::cdd_fidelity(&cdd_ideal_unitary(&params), &u);
        assert!((f - 0.99807888).abs() < 1e-3, "{f}");
    }

    #[test]
    fn frame_and_lab_propagation_agree_for_slow_drive() {
        // ω/2π = 50 MHz: slow enough for a direct lab-frame reference.
        let params = PhysicalParams::default();
        let omega = TWO_PI * 50.0e6;
        let h_n = params.native_hamiltonian();
        let lab = propagate_linear_final(
            |t| h_n + cdd_hamiltonian(t, omega),
            &TimeGrid::new(200_000, 0.0, params.tau).unwrap(),
        )
        .unwrap();
        let framed = cdd_test_unitary(&params, Some(omega), 1024).unwrap();
        assert!((lab - framed).norm() < 1e-5, "{}", (lab - framed).norm());
    }

    #[test]
    fn full_stack_with_zero_controls_is_cdd_bench() {
        let params = PhysicalParams::default();
        let omega = TWO_PI * 2.0e9;
        let grid = TimeGrid::new(100, 0.0, params.tau).unwrap();
        let w = full_stack_unitary(&params, omega, &ControlTrajectory::zeros(grid), 64).unwrap();
        let u = cdd_test_unitary(&params, Some(omega), 64).unwrap();
        let u_cdd = cdd_unitary(params.tau, omega);
        assert!((u_cdd * w - u).norm() < 1e-12);
        let bad = TimeGrid::new(100, 0.0, 2.0 * params.tau).unwrap();
        assert!(full_stack_unitary(&params, omega, &ControlTrajectory::zeros(bad), 64).is_err());
    }

    #[test]
    fn full_stack_matches_lab_frame_with_controls() {
        // lab frame: H_N + H_CDD + U_CDD·H_c·U_CDD†, slow drive, fine grid
        let params = PhysicalParams::default();
        let omega = TWO_PI * 50.0e6;
        let rate = 1.0 / params.tau;
        let grid = TimeGrid::new(400, 0.0, params.tau).unwrap();
        let samples = grid
            .nodes()
            .map(|t| {
                let s = t * rate;
                [3.0 * rate * s.cos(), -2.0 * rate, rate * (4.0 * s).sin(), 0.5 * rate, 2.5 * rate * s, -rate * s * s]
            })
            .collect();
        let controls = ControlTrajectory::new(grid, samples).unwrap();
        let h_n = params.native_hamiltonian();
        let lab = propagate_linear_final(
            |t| {
                let u = cdd_unitary(t, omega);
                let h_c = u * controls.hamiltonian_at(t) * u.adjoint();
                h_n + cdd_hamiltonian(t, omega) + HermitianOperator::hermitian_part(&h_c)
            },
            &TimeGrid::new(200_000, 0.0, params.tau).unwrap(),
        )
        .unwrap();
        let w = full_stack_unitary(&params, omega, &controls, 1024).unwrap();
        let framed = cdd_unitary(params.tau, omega) * w;
        assert!((lab - framed).norm() < 1e-5, "{}", (lab - framed).norm());
    }
}
