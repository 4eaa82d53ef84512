//! Physical model: native Hamiltonian, CDD drive, effective drift, target gates.
//!
//! Everything here is in physical units (rad/s, seconds) unless a function
//! says otherwise. The optimizers work in units where the gate time is 1;
//! [`PhysicalParams::scaled_drift`] produces the drift in those units.
//!
//! The CDD drive Hamiltonian is the generator of the closed-form CDD
//! unitary, i·(dU_CDD/dt)·U_CDD† = H_CDD. With U_1 = e^{−iωtσ_z}e^{−3iωtσ_x}
//! one finds ωσ_z + 3ω(σ_x cos 2ωt + σ_y sin 2ωt), i.e. the `+σ_y sin` sign;
//! the tests check this against a finite-difference derivative of the
//! closed form.
//!
//! Averaging U_CDD†·H_N·U_CDD over one CDD period leaves exactly
//! (J_zz/2)(σ_y⊗σ_y + σ_z⊗σ_z) for any real coupling matrix: the numerical
//! average agrees to rounding, not merely to leading order.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algebra::{
    kron, pauli, rephase_to_special, unitarity_defect, HermitianOperator, Mat2, Mat4, C64,
};
use crate::error::{invalid, Result};

/// Default coupling matrix J/2π in MHz (row μ, column ν of σ_μ⊗σ_ν).
pub const DEFAULT_COUPLINGS_MHZ: [[f64; 4]; 4] = [
    [0.0, 1.1, 1.2, 5.7],
    [4.7, 11.8, 9.4, 2.1],
    [4.8, 9.8, 31.6, 3.4],
    [0.8, 9.0, 0.2, 82.5],
];

pub const TWO_PI: f64 = 2.0 * PI;

/// Quadrature nodes used by [`averaged_hamiltonian_numeric`].
const AVERAGE_NODES: usize = 128;

/// Hardware parameters, in SI angular-frequency units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    /// Qubit frequency ω_z (rad/s). Only the lab frame uses it.
    pub omega_z: f64,
    /// J_{μν} (rad/s); J[0][0] must be zero.
    pub couplings: [[f64; 4]; 4],
    /// CDD base frequency ω (rad/s).
    pub omega_cdd: f64,
    /// Gate duration τ (s).
    pub tau: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            omega_z: TWO_PI * 5.0e9,
            couplings: couplings_from_mhz(&DEFAULT_COUPLINGS_MHZ),
            omega_cdd: TWO_PI * 20.0e9,
            tau: 40.0e-9,
        }
    }
}

/// Converts a J/2π table in MHz to rad/s.
pub fn couplings_from_mhz(mhz: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut j = [[0.0; 4]; 4];
    for (row, src) in j.iter_mut().zip(mhz) {
        for (v, s) in row.iter_mut().zip(src) {
            *v = TWO_PI * 1.0e6 * s;
        }
    }
    j
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        if self.couplings[0][0] != 0.0 {
            return Err(invalid("J[0][0] must be zero (traceless native Hamiltonian)"));
        }
        if self.couplings.iter().flatten().any(|j| !j.is_finite()) {
            return Err(invalid("coupling matrix contains non-finite entries"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid(format!("gate time must be positive, got {}", self.tau)));
        }
        if !(self.omega_cdd > 0.0 && self.omega_cdd.is_finite()) {
            return Err(invalid(format!(
                "CDD frequency must be positive, got {}",
                self.omega_cdd
            )));
        }
        Ok(())
    }

    /// The intended ZZ coupling J_{3,3}.
    pub fn j_zz(&self) -> f64 {
        self.couplings[3][3]
    }

    pub fn native_hamiltonian(&self) -> HermitianOperator {
        native_hamiltonian(&self.couplings)
    }

    pub fn drift_hamiltonian(&self) -> HermitianOperator {
        drift_hamiltonian(self.j_zz())
    }

    /// Drift in units of 1/τ (i.e. H_d·τ), the optimizers' working units.
    pub fn scaled_drift(&self) -> HermitianOperator {
        drift_hamiltonian(self.j_zz() * self.tau)
    }
}

/// H_N = Σ_{μν} J_{μν} σ_μ⊗σ_ν.
pub fn native_hamiltonian(couplings: &[[f64; 4]; 4]) -> HermitianOperator {
    let mut h = HermitianOperator::zero();
    for (mu, row) in couplings.iter().enumerate() {
        for (nu, j) in row.iter().enumerate() {
            if *j != 0.0 {
                h = h + HermitianOperator::pauli_term(mu, nu, *j);
            }
        }
    }
    h
}

/// H_d = (J_zz/2)(σ_y⊗σ_y + σ_z⊗σ_z).
pub fn drift_hamiltonian(j_zz: f64) -> HermitianOperator {
    HermitianOperator::pauli_term(2, 2, 0.5 * j_zz) + HermitianOperator::pauli_term(3, 3, 0.5 * j_zz)
}

/// exp(−iθσ) for a Pauli matrix σ.
fn pauli_rotation(theta: f64, sigma: usize) -> Mat2 {
    let (s, c) = theta.sin_cos();
    Mat2::identity() * C64::from(c) - pauli(sigma) * C64::new(0.0, s)
}

/// U_CDD(t) = U_1(t)⊗U_2(t) with U_1 = e^{−iωtσ_z}e^{−3iωtσ_x} and
/// U_2 = e^{−8iωtσ_z}e^{−3iωtσ_x}.
pub fn cdd_unitary(t: f64, omega: f64) -> Mat4 {
    let wt = omega * t;
    let u1 = pauli_rotation(wt, 3) * pauli_rotation(3.0 * wt, 1);
    let u2 = pauli_rotation(8.0 * wt, 3) * pauli_rotation(3.0 * wt, 1);
    kron(&u1, &u2)
}

fn cdd_single(t: f64, omega: f64, z_weight: f64) -> Mat2 {
    let (s, c) = (2.0 * z_weight * omega * t).sin_cos();
    pauli(3) * C64::from(z_weight * omega)
        + pauli(1) * C64::from(3.0 * omega * c)
        + pauli(2) * C64::from(3.0 * omega * s)
}

/// H_CDD(t) = H^(1)(t)⊗I + I⊗H^(2)(t), the generator of [`cdd_unitary`].
pub fn cdd_hamiltonian(t: f64, omega: f64) -> HermitianOperator {
    let h1 = cdd_single(t, omega, 1.0);
    let h2 = cdd_single(t, omega, 8.0);
    let id = Mat2::identity();
    HermitianOperator::hermitian_part(&(kron(&h1, &id) + kron(&id, &h2)))
}

/// Period average (ω/2π)∫₀^{2π/ω} U_CDD†·H_N·U_CDD dt, by the periodic
/// rectangle rule.
///
/// The integrand is a trigonometric polynomial in ωt of degree at most 30,
/// so 128 equally spaced nodes integrate it exactly up to rounding. The
/// average does not depend on ω.
pub fn averaged_hamiltonian_numeric(params: &PhysicalParams) -> HermitianOperator {
    let h = *params.native_hamiltonian().matrix();
    let omega = params.omega_cdd;
    let period = TWO_PI / omega;
    let mut acc = Mat4::zeros();
    for k in 0..AVERAGE_NODES {
        let u = cdd_unitary(period * k as f64 / AVERAGE_NODES as f64, omega);
        acc += u.adjoint() * h * u;
    }
    HermitianOperator::hermitian_part(&(acc / C64::from(AVERAGE_NODES as f64)))
}

/// Time-independent Hamiltonian with exp(−iH_CZ τ) = U_CZ.
pub fn cz_hamiltonian(tau: f64) -> HermitianOperator {
    let c = PI / (4.0 * tau);
    HermitianOperator::pauli_term(0, 3, c)
        + HermitianOperator::pauli_term(3, 0, c)
        + HermitianOperator::pauli_term(3, 3, -c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    Cz,
    Cx,
    R,
    Custom,
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateKind::Cz => "cz",
            GateKind::Cx => "cx",
            GateKind::R => "r",
            GateKind::Custom => "custom",
        })
    }
}

/// A target gate in SU(4).
#[derive(Debug, Clone, PartialEq)]
pub struct GateTarget {
    pub kind: GateKind,
    pub name: String,
    matrix: Mat4,
}

/// Haar-random single-qubit factors of the R gate, quoted to six decimals.
const R_GATE_U1: [[(f64, f64); 2]; 2] = [
    [(-0.942908, -0.158967), (0.0207764, 0.291929)],
    [(-0.0207764, 0.291929), (-0.942908, 0.158967)],
];
const R_GATE_U2: [[(f64, f64); 2]; 2] = [
    [(0.260618, 0.772926), (0.532428, 0.226236)],
    [(-0.532428, 0.226236), (0.260618, -0.772926)],
];

/// Largest unitarity defect accepted from a loaded matrix before it is
/// projected onto the nearest unitary.
pub const LOAD_UNITARITY_TOL: f64 = 1e-5;

fn mat2(entries: &[[(f64, f64); 2]; 2]) -> Mat2 {
    Mat2::from_fn(|r, c| C64::new(entries[r][c].0, entries[r][c].1))
}

/// Closest unitary in Frobenius norm, U·(U†U)^{-1/2}.
fn nearest_unitary(m: &Mat4) -> Mat4 {
    let gram = m.adjoint() * m;
    let eig = nalgebra::SymmetricEigen::new(gram);
    let v = eig.eigenvectors;
    let mut scaled = v;
    for (j, e) in eig.eigenvalues.iter().enumerate() {
        for i in 0..4 {
            scaled[(i, j)] /= C64::from(e.sqrt());
        }
    }
    m * (scaled * v.adjoint())
}

impl GateTarget {
    /// e^{−iπ/4}·diag(1, 1, 1, −1).
    pub fn cz() -> Self {
        let p = C64::from_polar(1.0, -PI / 4.0);
        let matrix = Mat4::from_diagonal(&nalgebra::Vector4::new(p, p, p, -p));
        GateTarget { kind: GateKind::Cz, name: "cz".into(), matrix }
    }

    /// e^{−iπ/4} times the CNOT permutation with qubit 1 as control.
    pub fn cx() -> Self {
        let p = C64::from_polar(1.0, -PI / 4.0);
        let mut matrix = Mat4::zeros();
        matrix[(0, 0)] = p;
        matrix[(1, 1)] = p;
        matrix[(2, 3)] = p;
        matrix[(3, 2)] = p;
        GateTarget { kind: GateKind::Cx, name: "cx".into(), matrix }
    }

    /// (U_1⊗U_2)·U_CX with the two fixed Haar-random factors, made exactly
    /// unitary and re-phased to unit determinant.
    pub fn r() -> Self {
        let raw = kron(&mat2(&R_GATE_U1), &mat2(&R_GATE_U2)) * Self::cx().matrix;
        GateTarget {
            kind: GateKind::R,
            name: "r".into(),
            matrix: rephase_to_special(&nearest_unitary(&raw)),
        }
    }

    /// The raw (un-normalized) R gate factors, as quoted.
    pub fn r_factors() -> (Mat2, Mat2) {
        (mat2(&R_GATE_U1), mat2(&R_GATE_U2))
    }

    pub fn builtin(kind: GateKind) -> Option<Self> {
        match kind {
            GateKind::Cz => Some(Self::cz()),
            GateKind::Cx => Some(Self::cx()),
            GateKind::R => Some(Self::r()),
            GateKind::Custom => None,
        }
    }

    /// Wraps a user-supplied matrix. Matrices within 1e-5 of unitary are
    /// projected onto the nearest unitary and re-phased into SU(4).
    pub fn custom(name: impl Into<String>, matrix: Mat4) -> Result<Self> {
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(invalid("gate matrix contains non-finite entries"));
        }
        let defect = unitarity_defect(&matrix);
        if defect > LOAD_UNITARITY_TOL {
            return Err(invalid(format!(
                "gate matrix is not unitary (‖U†U − I‖ = {defect:.3e})"
            )));
        }
        Ok(GateTarget {
            kind: GateKind::Custom,
            name: name.into(),
            matrix: rephase_to_special(&nearest_unitary(&matrix)),
        })
    }

    /// Reads a JSON array of 4 rows × 4 entries, each entry `[re, im]`.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let matrix = matrix_from_json(&text)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        Self::custom(name, matrix)
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.matrix
    }

    /// The same gate multiplied by a global phase e^{iφ}. Not re-phased.
    pub fn with_global_phase(&self, phi: f64) -> Self {
        GateTarget {
            kind: self.kind,
            name: self.name.clone(),
            matrix: self.matrix * C64::from_polar(1.0, phi),
        }
    }
}

/// Parses the `[[[re, im], ...], ...]` gate-file layout.
pub fn matrix_from_json(text: &str) -> Result<Mat4> {
    let rows: Vec<Vec<[f64; 2]>> = serde_json::from_str(text)?;
    if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
        return Err(invalid("gate file must hold a 4×4 array of [re, im] pairs"));
    }
    Ok(Mat4::from_fn(|r, c| C64::new(rows[r][c][0], rows[r][c][1])))
}

/// Inverse of [`matrix_from_json`].
pub fn matrix_to_json(m: &Mat4) -> String {
    let rows: Vec<Vec<[f64; 2]>> = (0..4)
        .map(|r| (0..4).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect();
    serde_json::to_string(&rows).expect("plain numeric array serializes")
}
