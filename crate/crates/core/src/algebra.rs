//! The su(4) matrix algebra used throughout the crate.
//!
//! Operators are 4×4 complex matrices on two qubits ordered |00⟩, |01⟩,
//! |10⟩, |11⟩; the first tensor factor is qubit 1. Coordinates are taken
//! against the fifteen Pauli products σ_μ⊗σ_ν with (μ,ν) ≠ (0,0), in
//! row-major order over (μ,ν):
//!
//! ```text
//! 0:IX  1:IY  2:IZ  3:XI  4:XX  5:XY  6:XZ  7:YI
//! 8:YX  9:YY 10:YZ 11:ZI 12:ZX 13:ZY 14:ZZ
//! ```
//!
//! With the normalization ⟨A,B⟩ = Tr(AB)/4 this basis is orthonormal, so the
//! coordinates of a Hermitian operator are simply ⟨α_k, M⟩.
//!
//! Matrix functions (`expm_hermitian`, `principal_log_unitary`) go through
//! eigendecompositions, never power series.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

use nalgebra::{Matrix2, Matrix4, Schur, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type C64 = Complex64;
pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;

/// Dimension of su(4).
pub const DIM: usize = 15;

/// Real coordinates in the Pauli-product basis.
pub type Coords = [f64; DIM];

/// Relative Hermiticity tolerance accepted by [`HermitianOperator::new`].
pub const HERMITICITY_TOL: f64 = 1e-12;

/// Eigenphases this close to ±π are treated as sitting on the branch cut.
pub const BRANCH_CUT_TOL: f64 = 1e-9;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// σ_0 = I, σ_1 = X, σ_2 = Y, σ_3 = Z.
pub fn pauli(index: usize) -> Mat2 {
    match index {
        0 => Mat2::new(ONE, ZERO, ZERO, ONE),
        1 => Mat2::new(ZERO, ONE, ONE, ZERO),
        2 => Mat2::new(ZERO, -I, I, ZERO),
        3 => Mat2::new(ONE, ZERO, ZERO, -ONE),
        _ => panic!("pauli index {index} out of range"),
    }
}

pub fn kron(a: &Mat2, b: &Mat2) -> Mat4 {
    Mat4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

pub fn pauli_product(mu: usize, nu: usize) -> Mat4 {
    kron(&pauli(mu), &pauli(nu))
}

/// Tr(AB) without forming the product.
pub fn trace_product(a: &Mat4, b: &Mat4) -> C64 {
    let mut acc = ZERO;
    for i in 0..4 {
        for j in 0..4 {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Hilbert–Schmidt inner product normalized so that ⟨I,I⟩ = 1.
pub fn hs_inner(a: &Mat4, b: &Mat4) -> C64 {
    trace_product(a, b) * 0.25
}

pub fn commutator(a: &Mat4, b: &Mat4) -> Mat4 {
    a * b - b * a
}

/// ‖U†U − I‖_F.
pub fn unitarity_defect(u: &Mat4) -> f64 {
    (u.adjoint() * u - Mat4::identity()).norm()
}

/// ‖M − M†‖_F.
pub fn hermiticity_defect(m: &Mat4) -> f64 {
    (m - m.adjoint()).norm()
}

/// The fifteen traceless Pauli products in the documented order.
#[derive(Debug, Clone)]
pub struct GeneratorBasis {
    elements: [Mat4; DIM],
}

impl GeneratorBasis {
    /// Shared instance of the Pauli-product basis.
    pub fn pauli() -> &'static GeneratorBasis {
        static BASIS: OnceLock<GeneratorBasis> = OnceLock::new();
        BASIS.get_or_init(|| {
            let mut elements = [Mat4::zeros(); DIM];
            for mu in 0..4 {
                for nu in 0..4 {
                    if (mu, nu) != (0, 0) {
                        elements[Self::index_of(mu, nu)] = pauli_product(mu, nu);
                    }
                }
            }
            GeneratorBasis { elements }
        })
    }

    /// Position of σ_μ⊗σ_ν in the coordinate vector.
    pub const fn index_of(mu: usize, nu: usize) -> usize {
        4 * mu + nu - 1
    }

    /// Inverse of [`GeneratorBasis::index_of`].
    pub const fn indices(k: usize) -> (usize, usize) {
        ((k + 1) / 4, (k + 1) % 4)
    }

    pub fn label(k: usize) -> String {
        const NAMES: [char; 4] = ['I', 'X', 'Y', 'Z'];
        let (mu, nu) = Self::indices(k);
        format!("{}{}", NAMES[mu], NAMES[nu])
    }

    pub fn elements(&self) -> &[Mat4; DIM] {
        &self.elements
    }

    pub fn element(&self, k: usize) -> &Mat4 {
        &self.elements[k]
    }

    /// λ_k = Tr(α_k M)/4 of an arbitrary square matrix, real parts only.
    pub fn coords_of_matrix(&self, m: &Mat4) -> Coords {
        let mut out = [0.0; DIM];
        for (c, a) in out.iter_mut().zip(&self.elements) {
            *c = hs_inner(a, m).re;
        }
        out
    }

    /// Coordinates of a raw matrix, rejecting non-Hermitian input.
    pub fn coords_checked(&self, m: &Mat4) -> Result<Coords> {
        HermitianOperator::new(*m).map(|h| self.coords(&h))
    }

    pub fn coords(&self, m: &HermitianOperator) -> Coords {
        self.coords_of_matrix(&m.0)
    }

    /// Σ_k c_k α_k.
    pub fn matrix(&self, coords: &Coords) -> Mat4 {
        let mut m = Mat4::zeros();
        for (c, a) in coords.iter().zip(&self.elements) {
            if *c != 0.0 {
                m += a * C64::from(*c);
            }
        }
        m
    }
}

/// A 4×4 Hermitian matrix (angular-frequency or dimensionless units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermitianOperator(Mat4);

impl HermitianOperator {
    /// Wraps `m` if ‖M − M†‖_F ≤ 1e-12·‖M‖_F.
    pub fn new(m: Mat4) -> Result<Self> {
        let defect = hermiticity_defect(&m);
        if defect > HERMITICITY_TOL * m.norm().max(f64::MIN_POSITIVE) && defect > 0.0 {
            return Err(invalid(format!(
                "matrix is not Hermitian (‖M − M†‖ = {defect:.3e})"
            )));
        }
        Ok(HermitianOperator(m))
    }

    /// Takes (M + M†)/2, discarding any anti-Hermitian rounding residue.
    pub fn hermitian_part(m: &Mat4) -> Self {
        HermitianOperator((m + m.adjoint()) * C64::from(0.5))
    }

    pub fn zero() -> Self {
        HermitianOperator(Mat4::zeros())
    }

    pub fn from_coords(coords: &Coords) -> Self {
        HermitianOperator(GeneratorBasis::pauli().matrix(coords))
    }

    /// c·σ_μ⊗σ_ν.
    pub fn pauli_term(mu: usize, nu: usize, coefficient: f64) -> Self {
        HermitianOperator(pauli_product(mu, nu) * C64::from(coefficient))
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }

    pub fn into_matrix(self) -> Mat4 {
        self.0
    }

    pub fn coords(&self) -> Coords {
        GeneratorBasis::pauli().coords(self)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scaled(&self, s: f64) -> Self {
        HermitianOperator(self.0 * C64::from(s))
    }

    /// exp(−iMt).
    pub fn propagator(&self, t: f64) -> Mat4 {
        expm_hermitian(self, t)
    }
}

impl Add for HermitianOperator {
    type Output = HermitianOperator;
    fn add(self, rhs: Self) -> Self {
        HermitianOperator(self.0 + rhs.0)
    }
}

impl Sub for HermitianOperator {
    type Output = HermitianOperator;
    fn sub(self, rhs: Self) -> Self {
        HermitianOperator(self.0 - rhs.0)
    }
}

impl Neg for HermitianOperator {
    type Output = HermitianOperator;
    fn neg(self) -> Self {
        HermitianOperator(-self.0)
    }
}

impl Mul<f64> for HermitianOperator {
    type Output = HermitianOperator;
    fn mul(self, rhs: f64) -> Self {
        self.scaled(rhs)
    }
}

/// The 15 real coordinates λ_k of the initial costate Λ(0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostateCoords(pub Coords);

impl CostateCoords {
    pub fn zero() -> Self {
        CostateCoords([0.0; DIM])
    }

    pub fn new(coords: Coords) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(invalid("costate coordinates must be finite"));
        }
        Ok(CostateCoords(coords))
    }

    /// Λ(0) = Σ_k λ_k α_k.
    pub fn operator(&self) -> HermitianOperator {
        HermitianOperator::from_coords(&self.0)
    }

    pub fn as_array(&self) -> &Coords {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    fn slot(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Generator of control channel `channel` (0-based): channels 0..3 are
/// σ_{x,y,z}⊗I on qubit 1, channels 3..6 are I⊗σ_{x,y,z} on qubit 2.
pub fn control_generator(channel: usize) -> &'static Mat4 {
    static GENERATORS: OnceLock<[Mat4; 6]> = OnceLock::new();
    &GENERATORS.get_or_init(|| {
        std::array::from_fn(|c| {
            if c < 3 {
                pauli_product(c + 1, 0)
            } else {
                pauli_product(0, c - 2)
            }
        })
    })[channel]
}

/// Span of the permitted single-qubit control generators.
///
/// The same axis mask applies to both qubits: the full distribution holds
/// all six local generators and each restricted one drops a single axis on
/// both qubits, leaving four.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Distribution {
    axes: [bool; 3],
}

impl Distribution {
    pub fn full() -> Self {
        Distribution { axes: [true; 3] }
    }

    pub fn without(axis: Axis) -> Self {
        let mut axes = [true; 3];
        axes[axis.slot()] = false;
        Distribution { axes }
    }

    pub fn from_axes(axes: &[Axis]) -> Result<Self> {
        let mut mask = [false; 3];
        for a in axes {
            mask[a.slot()] = true;
        }
        if !mask.iter().any(|&m| m) {
            return Err(invalid("control distribution must contain at least one axis"));
        }
        Ok(Distribution { axes: mask })
    }

    /// Parses an axis string such as `xyz`, `yz`, `xz` or `xy`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut axes = Vec::new();
        for ch in s.trim().chars() {
            let axis = match ch.to_ascii_lowercase() {
                'x' => Axis::X,
                'y' => Axis::Y,
                'z' => Axis::Z,
                ',' | ' ' => continue,
                other => return Err(invalid(format!("unknown control axis '{other}' in '{s}'"))),
            };
            if axes.contains(&axis) {
                return Err(invalid(format!("repeated control axis in '{s}'")));
            }
            axes.push(axis);
        }
        Self::from_axes(&axes)
    }

    pub fn contains(&self, axis: Axis) -> bool {
        self.axes[axis.slot()]
    }

    pub fn label(&self) -> String {
        Axis::ALL
            .iter()
            .filter(|a| self.contains(**a))
            .map(|a| match a {
                Axis::X => 'x',
                Axis::Y => 'y',
                Axis::Z => 'z',
            })
            .collect()
    }

    /// Which of the six control channels are active.
    pub fn channel_mask(&self) -> [bool; 6] {
        std::array::from_fn(|c| self.axes[c % 3])
    }

    /// Number of generators in the distribution.
    pub fn len(&self) -> usize {
        2 * self.axes.iter().filter(|&&a| a).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (channel, generator) pairs of the members.
    pub fn members(&self) -> impl Iterator<Item = (usize, &'static Mat4)> + '_ {
        (0..6)
            .filter(move |c| self.axes[c % 3])
            .map(|c| (c, control_generator(c)))
    }

    /// Control amplitudes ⟨g_c, M⟩ for every channel, zero on suppressed ones.
    ///
    /// Uses the partial traces of `m`, so it costs a handful of additions.
    pub fn amplitudes(&self, m: &Mat4) -> [f64; 6] {
        let local = local_coords(m);
        let mask = self.channel_mask();
        std::array::from_fn(|c| if mask[c] { local[c] } else { 0.0 })
    }

    /// P[M] as a raw matrix.
    pub fn project_matrix(&self, m: &Mat4) -> Mat4 {
        control_matrix(&self.amplitudes(m))
    }

    /// P[M] = Σ_{g∈Δ} ⟨g, M⟩ g.
    pub fn project(&self, m: &HermitianOperator) -> HermitianOperator {
        HermitianOperator(self.project_matrix(&m.0))
    }
}

impl Default for Distribution {
    fn default() -> Self {
        Self::full()
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// ⟨σ_k⊗I, M⟩ and ⟨I⊗σ_k, M⟩ for k = x, y, z, from the partial traces of `m`.
pub fn local_coords(m: &Mat4) -> [f64; 6] {
    // Tr_2 M and Tr_1 M as 2×2 blocks.
    let a00 = m[(0, 0)] + m[(1, 1)];
    let a01 = m[(0, 2)] + m[(1, 3)];
    let a10 = m[(2, 0)] + m[(3, 1)];
    let a11 = m[(2, 2)] + m[(3, 3)];
    let b00 = m[(0, 0)] + m[(2, 2)];
    let b01 = m[(0, 1)] + m[(2, 3)];
    let b10 = m[(1, 0)] + m[(3, 2)];
    let b11 = m[(1, 1)] + m[(3, 3)];
    [
        0.25 * (a01 + a10).re,
        0.25 * (I * (a01 - a10)).re,
        0.25 * (a00 - a11).re,
        0.25 * (b01 + b10).re,
        0.25 * (I * (b01 - b10)).re,
        0.25 * (b00 - b11).re,
    ]
}

/// H_c = Σ_c h_c g_c built directly from the six channel amplitudes.
pub fn control_matrix(h: &[f64; 6]) -> Mat4 {
    let q1 = Mat2::new(
        C64::new(h[2], 0.0),
        C64::new(h[0], -h[1]),
        C64::new(h[0], h[1]),
        C64::new(-h[2], 0.0),
    );
    let q2 = Mat2::new(
        C64::new(h[5], 0.0),
        C64::new(h[3], -h[4]),
        C64::new(h[3], h[4]),
        C64::new(-h[5], 0.0),
    );
    kron(&q1, &Mat2::identity()) + kron(&Mat2::identity(), &q2)
}

/// exp(−iMt) for Hermitian M, via the eigendecomposition of M.
pub fn expm_hermitian(m: &HermitianOperator, t: f64) -> Mat4 {
    expm_hermitian_matrix(&m.0, t)
}

/// As [`expm_hermitian`] for a raw matrix assumed Hermitian.
pub fn expm_hermitian_matrix(m: &Mat4, t: f64) -> Mat4 {
    let eig = SymmetricEigen::new(*m);
    let v = eig.eigenvectors;
    let mut scaled = v;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let phase = C64::from_polar(1.0, -lambda * t);
        for i in 0..4 {
            scaled[(i, j)] *= phase;
        }
    }
    scaled * v.adjoint()
}

/// Generator coordinates of a unitary on the principal logarithmic branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogCoords {
    /// c_k with U = e^{−iφ}·exp(−i Σ c_k α_k).
    pub coords: Coords,
    /// φ, the discarded identity component Tr(K)/4.
    pub global_phase: f64,
    /// Some eigenphase lay within [`BRANCH_CUT_TOL`] of ±π.
    pub near_branch_cut: bool,
}

/// Principal logarithm of a unitary, split into su(4) coordinates and a phase.
///
/// Eigenphases are taken in (−π, π]; any phase within 1e-9 of the cut is
/// mapped to +π and the result is flagged.
pub fn principal_log_unitary(u: &Mat4, basis: &GeneratorBasis) -> LogCoords {
    let (q, t) = Schur::new(*u).unpack();
    let mut near_branch_cut = false;
    let mut generator_eigs = [0.0; 4];
    for (j, g) in generator_eigs.iter_mut().enumerate() {
        let mut phase = t[(j, j)].arg();
        if phase >= PI - BRANCH_CUT_TOL || phase <= -PI + BRANCH_CUT_TOL {
            near_branch_cut = true;
            phase = PI;
        }
        // exp(−iκ) = e^{iφ}  ⇒  κ = −φ
        *g = -phase;
    }
    let mut scaled = q;
    for (j, g) in generator_eigs.iter().enumerate() {
        for i in 0..4 {
            scaled[(i, j)] *= C64::from(*g);
        }
    }
    let k = scaled * q.adjoint();
    LogCoords {
        coords: basis.coords_of_matrix(&k),
        global_phase: generator_eigs.iter().sum::<f64>() / 4.0,
        near_branch_cut,
    }
}

/// Divides a unitary by a fourth root of its determinant.
pub fn rephase_to_special(u: &Mat4) -> Mat4 {
    let det = u.determinant();
    let root = C64::from_polar(det.norm().powf(-0.25), -det.arg() / 4.0);
    u * root
}
