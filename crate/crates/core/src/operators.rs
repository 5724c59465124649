//! Qubit-register operator algebra.
//!
//! Everything here is dense and built directly from the action on basis
//! states (see the crate-level basis convention). Sites are 1-based.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::battery::BatteryState;
use crate::error::{argument, Result};
use crate::C64;

/// Largest register accepted anywhere in the crate.
pub const MAX_SITES: usize = 14;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// A register of `n_sites` qubits (equivalently, fermion modes).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QubitRegister {
    n_sites: usize,
}

impl QubitRegister {
    pub fn new(n_sites: usize) -> Result<Self> {
        if n_sites == 0 || n_sites > MAX_SITES {
            return Err(argument(format!(
                "register size {n_sites} outside 1..={MAX_SITES}"
            )));
        }
        Ok(Self { n_sites })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }

    /// Basis-index bit that stores `site`.
    #[inline]
    pub fn site_mask(&self, site: usize) -> usize {
        1 << (self.n_sites - site)
    }

    pub(crate) fn check_site(&self, site: usize) -> Result<()> {
        if site == 0 || site > self.n_sites {
            Err(argument(format!(
                "site {site} outside 1..={}",
                self.n_sites
            )))
        } else {
            Ok(())
        }
    }

    /// Number of occupied modes (zero bits) in a basis state.
    #[inline]
    pub fn charge_of(&self, basis: usize) -> usize {
        self.n_sites - basis.count_ones() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Dense complex operator on a full qubit register.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    register: QubitRegister,
    matrix: Mat<C64>,
}

impl DenseOperator {
    pub fn from_matrix(register: QubitRegister, matrix: Mat<C64>) -> Result<Self> {
        let dim = register.dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(argument(format!(
                "matrix is {}x{}, register needs {dim}x{dim}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { register, matrix })
    }

    pub fn zeros(register: QubitRegister) -> Self {
        let dim = register.dim();
        Self {
            register,
            matrix: Mat::zeros(dim, dim),
        }
    }

    pub fn identity(register: QubitRegister) -> Self {
        let dim = register.dim();
        Self {
            register,
            matrix: Mat::from_fn(dim, dim, |i, j| if i == j { ONE } else { ZERO }),
        }
    }

    pub fn register(&self) -> QubitRegister {
        self.register
    }

    pub fn dim(&self) -> usize {
        self.register.dim()
    }

    pub fn matrix(&self) -> &Mat<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat<C64> {
        self.matrix
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    /// Largest entrywise modulus of `M - M†`.
    pub fn hermitian_deviation(&self) -> f64 {
        hermitian_deviation(&self.matrix)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    pub fn adjoint(&self) -> Self {
        Self {
            register: self.register,
            matrix: self.matrix.adjoint().to_owned(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.matrix)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                worst = worst.max((self.matrix[(i, j)] - other.matrix[(i, j)]).norm());
            }
        }
        worst
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self {
            register: self.register,
            matrix: &self.matrix * &other.matrix,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.combine(other, ONE)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.combine(other, -ONE)
    }

    pub fn scale(&self, factor: C64) -> Self {
        let m = &self.matrix;
        Self {
            register: self.register,
            matrix: Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * factor),
        }
    }

    /// `[A, B] = AB - BA`.
    pub fn commutator(&self, other: &Self) -> Self {
        self.mul(other).sub(&other.mul(self))
    }

    /// `{A, B} = AB + BA`.
    pub fn anticommutator(&self, other: &Self) -> Self {
        self.mul(other).add(&other.mul(self))
    }

    fn combine(&self, other: &Self, factor: C64) -> Self {
        let (a, b) = (&self.matrix, &other.matrix);
        Self {
            register: self.register,
            matrix: Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] + factor * b[(i, j)]),
        }
    }
}

pub(crate) fn hermitian_deviation(m: &Mat<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub(crate) fn max_abs(m: &Mat<C64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            worst = worst.max(m[(i, j)].norm());
        }
    }
    worst
}

/// Builds a dense operator from a map `basis -> Option<(image, amplitude)>`.
fn from_basis_map(
    register: QubitRegister,
    action: impl Fn(usize) -> Option<(usize, C64)>,
) -> DenseOperator {
    let mut op = DenseOperator::zeros(register);
    for col in 0..register.dim() {
        if let Some((row, amp)) = action(col) {
            op.matrix[(row, col)] += amp;
        }
    }
    op
}

/// Single-site Pauli matrix embedded at `site`.
pub fn pauli(site: usize, axis: Axis, register: QubitRegister) -> Result<DenseOperator> {
    register.check_site(site)?;
    let mask = register.site_mask(site);
    Ok(from_basis_map(register, |b| {
        let up = b & mask == 0;
        Some(match axis {
            Axis::X => (b ^ mask, ONE),
            // σʸ|↑⟩ = i|↓⟩, σʸ|↓⟩ = -i|↑⟩
            Axis::Y => (b ^ mask, if up { I } else { -I }),
            Axis::Z => (b, if up { ONE } else { -ONE }),
        })
    }))
}

/// Jordan-Wigner sign: the σᶻ string over sites `1..site`, evaluated on `basis`.
#[inline]
pub(crate) fn string_sign(register: QubitRegister, site: usize, basis: usize) -> f64 {
    // bits above the site's own bit belong to sites 1..site
    let above = basis >> (register.n_sites() - site + 1);
    if above.count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `ĉ_site` acting on one basis state; `None` when the mode is empty.
#[inline]
pub(crate) fn annihilate(register: QubitRegister, site: usize, basis: usize) -> Option<(usize, f64)> {
    let mask = register.site_mask(site);
    if basis & mask != 0 {
        return None;
    }
    Some((basis | mask, string_sign(register, site, basis)))
}

/// `ĉ†_site` acting on one basis state; `None` when the mode is occupied.
#[inline]
pub(crate) fn create(register: QubitRegister, site: usize, basis: usize) -> Option<(usize, f64)> {
    let mask = register.site_mask(site);
    if basis & mask == 0 {
        return None;
    }
    Some((basis & !mask, string_sign(register, site, basis)))
}

/// Jordan-Wigner annihilator `ĉ_site = (∏_{m<site} σᶻ_m) σ⁻_site`.
pub fn jw_annihilation(site: usize, register: QubitRegister) -> Result<DenseOperator> {
    register.check_site(site)?;
    Ok(from_basis_map(register, |b| {
        annihilate(register, site, b).map(|(out, s)| (out, C64::new(s, 0.0)))
    }))
}

/// Jordan-Wigner creator, the adjoint of [`jw_annihilation`].
pub fn jw_creation(site: usize, register: QubitRegister) -> Result<DenseOperator> {
    register.check_site(site)?;
    Ok(from_basis_map(register, |b| {
        create(register, site, b).map(|(out, s)| (out, C64::new(s, 0.0)))
    }))
}

/// Battery Hamiltonian `H0 = ω0 Σ_i σʸ_i`.
pub fn h0(register: QubitRegister, omega0: f64) -> Result<DenseOperator> {
    if !(omega0 > 0.0 && omega0.is_finite()) {
        return Err(argument(format!("omega0 must be positive, got {omega0}")));
    }
    let mut op = DenseOperator::zeros(register);
    for site in 1..=register.n_sites() {
        let mask = register.site_mask(site);
        for b in 0..register.dim() {
            let amp = if b & mask == 0 { I } else { -I };
            op.matrix[(b ^ mask, b)] += amp * omega0;
        }
    }
    Ok(op)
}

/// Analytic spectrum of [`h0`], ascending: `kω0` for `k = -N, -N+2, .., N`
/// with multiplicity `C(N, (N+k)/2)`.
pub fn h0_levels(register: QubitRegister, omega0: f64) -> Vec<f64> {
    let n = register.n_sites();
    let mut levels = Vec::with_capacity(register.dim());
    for excitations in 0..=n {
        let energy = (2.0 * excitations as f64 - n as f64) * omega0;
        levels.extend(std::iter::repeat_n(energy, binomial(n, excitations)));
    }
    levels
}

/// Total fermion number `Q = Σ ĉ†ĉ`; diagonal in the computational basis.
pub fn charge(register: QubitRegister) -> DenseOperator {
    from_basis_map(register, |b| {
        Some((b, C64::new(register.charge_of(b) as f64, 0.0)))
    })
}

/// The discharged state `⊗ |↓ʸ⟩` with `|↓ʸ⟩ = (|↑⟩ - i|↓⟩)/√2` on every site.
pub fn discharged_state(register: QubitRegister) -> BatteryState {
    let n = register.n_sites();
    let norm = (0.5f64).powf(n as f64 / 2.0);
    // (-i)^k for k = 0..3
    let phases = [ONE, -I, -ONE, I];
    let amplitudes = (0..register.dim())
        .map(|b| phases[b.count_ones() as usize % 4] * norm)
        .collect();
    BatteryState::from_normalized(register, amplitudes)
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}
