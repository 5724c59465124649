//! Charging protocol and battery figures of merit.
//!
//! The battery starts in the ground state of `H0 = ω0 Σ σʸ` and is driven by
//! the sparse cSYK Hamiltonian `H1` for a time `τ_c`. Because `H1` conserves
//! charge, it is diagonalized sector by sector; `H0` is handled through its
//! analytic product eigenbasis.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{argument, contract, Error, Result};
use crate::operators::{h0, DenseOperator, QubitRegister};
use crate::sectors::ChargeSector;
use crate::spectra::diagonalize;
use crate::syk::{build_sector_hamiltonian, CouplingTensor};
use crate::C64;

/// Tolerance on `‖ψ‖ = 1` for user-supplied states.
pub const NORM_TOL: f64 = 1e-12;

/// Stored energies below `ω0` times this make the efficiency undefined.
pub const ENERGY_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct BatteryState {
    register: QubitRegister,
    amplitudes: Vec<C64>,
}

impl BatteryState {
    pub fn new(register: QubitRegister, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != register.dim() {
            return Err(argument(format!(
                "expected {} amplitudes, got {}",
                register.dim(),
                amplitudes.len()
            )));
        }
        let state = Self {
            register,
            amplitudes,
        };
        let norm = state.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(contract(format!("state norm is {norm}, expected 1")));
        }
        Ok(state)
    }

    pub(crate) fn from_normalized(register: QubitRegister, amplitudes: Vec<C64>) -> Self {
        debug_assert_eq!(amplitudes.len(), register.dim());
        Self {
            register,
            amplitudes,
        }
    }

    pub fn register(&self) -> QubitRegister {
        self.register
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `⟨ψ|A|ψ⟩` for a dense operator on the same register.
    pub fn expectation(&self, op: &DenseOperator) -> Result<C64> {
        if op.register() != self.register {
            return Err(argument("operator and state live on different registers"));
        }
        let m = op.matrix();
        let d = self.amplitudes.len();
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..d {
            let aj = self.amplitudes[j];
            if aj == C64::new(0.0, 0.0) {
                continue;
            }
            for i in 0..d {
                acc += self.amplitudes[i].conj() * m[(i, j)] * aj;
            }
        }
        Ok(acc)
    }

    /// `⟨σʸ_site⟩`.
    pub fn sigma_y(&self, site: usize) -> f64 {
        let mask = self.register.site_mask(site);
        let a = &self.amplitudes;
        // σʸ|0⟩ = i|1⟩ on the site bit; summing over b with the bit clear
        // picks up both ⟨1|σʸ|0⟩ and its conjugate
        let mut acc = 0.0;
        for b in 0..a.len() {
            if b & mask == 0 {
                let v = a[b | mask].conj() * C64::new(0.0, 1.0) * a[b];
                acc += 2.0 * v.re;
            }
        }
        acc
    }
}

/// Quench protocol: `H_B(t) = H0 + λ(t) H1` with `λ = 1` on `[0, τ_c)`.
#[derive(Clone, Debug)]
pub struct ChargingProtocol {
    pub omega0: f64,
    pub tensor: CouplingTensor,
    pub tau_c: f64,
}

impl ChargingProtocol {
    pub fn new(omega0: f64, tensor: CouplingTensor, tau_c: f64) -> Result<Self> {
        if !(omega0 > 0.0 && omega0.is_finite()) {
            return Err(argument(format!("omega0 must be positive, got {omega0}")));
        }
        if !(tau_c >= 0.0 && tau_c.is_finite()) {
            return Err(argument(format!("tau_c must be non-negative, got {tau_c}")));
        }
        Ok(Self {
            omega0,
            tensor,
            tau_c,
        })
    }

    pub fn register(&self) -> QubitRegister {
        QubitRegister::new(self.tensor.n_sites()).expect("tensor size already validated")
    }

    pub fn propagator(&self) -> Result<Propagator> {
        Propagator::new(&self.tensor)
    }
}

/// Eigendecomposition of one charge block of `H1`.
#[derive(Clone, Debug)]
struct SectorEigen {
    sector: ChargeSector,
    energies: Vec<f64>,
    vectors: Mat<C64>,
}

/// `exp(-i H1 t)` through the sector-wise spectral decomposition of `H1`.
#[derive(Clone, Debug)]
pub struct Propagator {
    register: QubitRegister,
    sectors: Vec<SectorEigen>,
}

/// A state expanded in the eigenbasis of `H1`, ready for repeated evolution.
#[derive(Clone, Debug)]
pub struct EigenExpansion<'a> {
    propagator: &'a Propagator,
    initial: BatteryState,
    coefficients: Vec<Vec<C64>>,
}

impl Propagator {
    pub fn new(tensor: &CouplingTensor) -> Result<Self> {
        let register = QubitRegister::new(tensor.n_sites())?;
        let sectors = ChargeSector::all(register)
            .into_iter()
            .map(|sector| {
                let block = build_sector_hamiltonian(tensor, &sector)?;
                let (energies, vectors) = diagonalize(&block, true)?.into_parts();
                Ok(SectorEigen {
                    sector,
                    energies,
                    vectors: vectors.expect("requested eigenvectors"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { register, sectors })
    }

    pub fn register(&self) -> QubitRegister {
        self.register
    }

    /// All eigenvalues of `H1`, ascending.
    pub fn energies(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.sectors.iter().flat_map(|s| s.energies.iter().copied()).collect();
        all.sort_by(f64::total_cmp);
        all
    }

    pub fn expand<'a>(&'a self, state: &BatteryState) -> Result<EigenExpansion<'a>> {
        if state.register() != self.register {
            return Err(argument("state and propagator live on different registers"));
        }
        let amps = state.amplitudes();
        let coefficients = self
            .sectors
            .iter()
            .map(|s| {
                let v = &s.vectors;
                (0..s.energies.len())
                    .map(|k| {
                        s.sector
                            .states()
                            .iter()
                            .enumerate()
                            .map(|(row, &b)| v[(row, k)].conj() * amps[b])
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Ok(EigenExpansion {
            propagator: self,
            initial: state.clone(),
            coefficients,
        })
    }

    /// `exp(-i H1 t)|state⟩`.
    pub fn evolve(&self, state: &BatteryState, t: f64) -> Result<BatteryState> {
        self.expand(state)?.at(t)
    }
}

impl EigenExpansion<'_> {
    pub fn at(&self, t: f64) -> Result<BatteryState> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(argument(format!("evolution time must be non-negative, got {t}")));
        }
        if t == 0.0 {
            return Ok(self.initial.clone());
        }
        let register = self.propagator.register;
        let mut out = vec![C64::new(0.0, 0.0); register.dim()];
        for (s, coeffs) in self.propagator.sectors.iter().zip(&self.coefficients) {
            let phased: Vec<C64> = s
                .energies
                .iter()
                .zip(coeffs)
                .map(|(&e, &c)| c * C64::from_polar(1.0, -e * t))
                .collect();
            let v = &s.vectors;
            for (row, &b) in s.sector.states().iter().enumerate() {
                out[b] = phased.iter().enumerate().map(|(k, &c)| v[(row, k)] * c).sum();
            }
        }
        Ok(BatteryState::from_normalized(register, out))
    }

    /// `⟨H1⟩`, independent of time.
    pub fn energy(&self) -> f64 {
        self.propagator
            .sectors
            .iter()
            .zip(&self.coefficients)
            .flat_map(|(s, c)| s.energies.iter().zip(c).map(|(&e, z)| e * z.norm_sqr()))
            .sum()
    }
}

/// `|Ψ(t)⟩ = exp(-i H1 t)|Ψ0⟩` for `0 <= t <= τ_c`.
pub fn evolve(protocol: &ChargingProtocol, state0: &BatteryState, t: f64) -> Result<BatteryState> {
    if t < 0.0 {
        return Err(argument(format!("evolution time must be non-negative, got {t}")));
    }
    if t > protocol.tau_c {
        return Err(argument(format!(
            "time {t} lies past the end of charging ({})",
            protocol.tau_c
        )));
    }
    if t == 0.0 {
        return Ok(state0.clone());
    }
    protocol.propagator()?.evolve(state0, t)
}

/// Weights on the `H0` eigenspaces, indexed by the number of excitations
/// `n = 0..=N` above the ground state (`k = 2n - N`, shifted level `k + N = 2n`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelPopulations {
    pub weights: Vec<f64>,
}

impl LevelPopulations {
    pub fn n_sites(&self) -> usize {
        self.weights.len() - 1
    }

    /// Level labels `k + N` in units of `ω0`; the ground level is 0.
    pub fn shifted_levels(&self) -> Vec<usize> {
        (0..self.weights.len()).map(|n| 2 * n).collect()
    }

    /// `Σ_k (k + N) ω0 p_k`, the stored energy of the whole battery.
    pub fn energy_above_ground(&self, omega0: f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(n, w)| 2.0 * n as f64 * omega0 * w)
            .sum()
    }
}

/// Populations at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationRecord {
    pub time: f64,
    pub populations: LevelPopulations,
}

/// `p_k = Σ_i |⟨k,i|ψ⟩|²` over the degenerate `H0` eigenspaces.
pub fn populations(state: &BatteryState) -> LevelPopulations {
    let register = state.register();
    let mut amps = state.amplitudes().to_vec();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let i = C64::new(0.0, 1.0);
    // rotate every site into the σʸ eigenbasis: bit 0 ↔ |↑ʸ⟩, bit 1 ↔ |↓ʸ⟩
    for site in 1..=register.n_sites() {
        let mask = register.site_mask(site);
        for b in 0..amps.len() {
            if b & mask == 0 {
                let (x0, x1) = (amps[b], amps[b | mask]);
                amps[b] = (x0 - i * x1) * h;
                amps[b | mask] = (x0 + i * x1) * h;
            }
        }
    }
    let mut weights = vec![0.0; register.n_sites() + 1];
    for (b, a) in amps.iter().enumerate() {
        weights[register.charge_of(b)] += a.norm_sqr();
    }
    LevelPopulations { weights }
}

/// `⟨H0^(m)⟩ - E0^(m)` with `H0^(m) = ω0 Σ_{i<=m} σʸ_i` and `E0^(m) = -m ω0`.
pub fn stored_energy(protocol: &ChargingProtocol, state: &BatteryState, subset_size: usize) -> Result<f64> {
    stored_energy_at(protocol.omega0, state, subset_size)
}

pub fn stored_energy_at(omega0: f64, state: &BatteryState, subset_size: usize) -> Result<f64> {
    let n = state.register().n_sites();
    if subset_size == 0 || subset_size > n {
        return Err(argument(format!("subset size {subset_size} outside 1..={n}")));
    }
    let sum: f64 = (1..=subset_size).map(|site| state.sigma_y(site)).sum();
    Ok(omega0 * (sum + subset_size as f64))
}

#[derive(Clone, Debug)]
pub struct DensityMatrix {
    matrix: Mat<C64>,
}

impl DensityMatrix {
    /// Checks Hermiticity and unit trace; positivity is checked where the
    /// spectrum is computed anyway.
    pub fn new(matrix: Mat<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(argument("density matrix must be square"));
        }
        let dev = crate::operators::hermitian_deviation(&matrix);
        if dev > 1e-12 {
            return Err(contract(format!("density matrix not Hermitian ({dev:e})")));
        }
        let rho = Self { matrix };
        let tr = rho.trace();
        if (tr - 1.0).abs() > 1e-12 {
            return Err(contract(format!("density matrix trace is {tr}")));
        }
        Ok(rho)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Mat<C64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).sum()
    }

    pub fn purity(&self) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += (self.matrix[(i, j)] * self.matrix[(j, i)]).re;
            }
        }
        acc
    }

    /// `Tr[A ρ]`.
    pub fn expectation(&self, op: &Mat<C64>) -> f64 {
        let d = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                acc += op[(i, j)] * self.matrix[(j, i)];
            }
        }
        acc.re
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(diagonalize(&self.matrix, false)?.into_parts().0)
    }
}

/// Partial trace onto sites `1..=keep_sites`.
pub fn reduced_state(state: &BatteryState, keep_sites: usize) -> Result<DensityMatrix> {
    let n = state.register().n_sites();
    if keep_sites == 0 || keep_sites > n {
        return Err(argument(format!("keep_sites {keep_sites} outside 1..={n}")));
    }
    let kept = 1usize << keep_sites;
    let traced = 1usize << (n - keep_sites);
    let a = state.amplitudes();
    let mut rho = Mat::<C64>::zeros(kept, kept);
    for r in 0..kept {
        for c in 0..=r {
            let v: C64 = (0..traced)
                .map(|b| a[r * traced + b] * a[c * traced + b].conj())
                .sum();
            rho[(r, c)] = v;
            rho[(c, r)] = v.conj();
        }
    }
    Ok(DensityMatrix { matrix: rho })
}

/// `Tr[Hσ]` for the passive state σ: populations sorted descending against
/// energies sorted ascending.
pub fn passive_energy(rho_eigenvalues: &[f64], h_eigenvalues: &[f64]) -> f64 {
    let mut r = rho_eigenvalues.to_vec();
    let mut e = h_eigenvalues.to_vec();
    r.sort_by(|a, b| b.total_cmp(a));
    e.sort_by(f64::total_cmp);
    r.iter().zip(&e).map(|(p, en)| p * en).sum()
}

/// Maximum work extractable from `rho` by unitaries, with respect to `h_sub`.
pub fn ergotropy(rho: &DensityMatrix, h_sub: &DenseOperator) -> Result<f64> {
    if rho.dim() != h_sub.dim() {
        return Err(argument(format!(
            "rho has dimension {}, hamiltonian {}",
            rho.dim(),
            h_sub.dim()
        )));
    }
    let levels = diagonalize(h_sub, false)?.into_parts().0;
    ergotropy_with_levels(rho, h_sub.matrix(), &levels)
}

pub(crate) fn ergotropy_with_levels(rho: &DensityMatrix, h: &Mat<C64>, h_levels: &[f64]) -> Result<f64> {
    let tr = rho.trace();
    if (tr - 1.0).abs() > 1e-12 {
        return Err(contract(format!("density matrix trace is {tr}")));
    }
    let r = rho.eigenvalues()?;
    if let Some(&min) = r.first() {
        if min < -1e-12 {
            return Err(contract(format!("density matrix has eigenvalue {min:e}")));
        }
    }
    let energy = rho.expectation(h);
    Ok((energy - passive_energy(&r, h_levels)).max(0.0))
}

/// Reusable half-battery measurement: `H0` on sites `1..=N/2` and its levels.
#[derive(Clone, Debug)]
pub struct HalfBattery {
    omega0: f64,
    cells: usize,
    h_sub: DenseOperator,
    levels: Vec<f64>,
}

/// Ergotropy and stored energy of the half battery at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfBatteryReading {
    pub stored: f64,
    pub ergotropy: f64,
}

impl HalfBatteryReading {
    /// `ℰ / E`, or an undefined-ratio error when `E` is numerically zero.
    pub fn efficiency(&self, omega0: f64) -> Result<f64> {
        if self.stored.abs() < ENERGY_FLOOR * omega0 {
            return Err(Error::UndefinedRatio(format!(
                "stored half-battery energy {:e} below floor",
                self.stored
            )));
        }
        Ok(self.ergotropy / self.stored)
    }
}

impl HalfBattery {
    pub fn new(register: QubitRegister, omega0: f64) -> Result<Self> {
        let n = register.n_sites();
        if n % 2 != 0 {
            return Err(argument(format!("half-battery quantities need even N, got {n}")));
        }
        let cells = n / 2;
        let sub = QubitRegister::new(cells)?;
        Ok(Self {
            omega0,
            cells,
            h_sub: h0(sub, omega0)?,
            levels: crate::operators::h0_levels(sub, omega0),
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn read(&self, state: &BatteryState) -> Result<HalfBatteryReading> {
        let stored = stored_energy_at(self.omega0, state, self.cells)?;
        let rho = reduced_state(state, self.cells)?;
        let ergotropy = ergotropy_with_levels(&rho, self.h_sub.matrix(), &self.levels)?;
        Ok(HalfBatteryReading { stored, ergotropy })
    }
}

/// `ℰ_{N/2}(τ_c) / E_{N/2}(τ_c)` for one realization.
pub fn efficiency(protocol: &ChargingProtocol, state_at_tau: &BatteryState) -> Result<f64> {
    HalfBattery::new(state_at_tau.register(), protocol.omega0)?
        .read(state_at_tau)?
        .efficiency(protocol.omega0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{discharged_state, pauli, Axis};

    fn reg(n: usize) -> QubitRegister {
        QubitRegister::new(n).unwrap()
    }

    fn up_y() -> BatteryState {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        BatteryState::new(reg(1), vec![C64::new(h, 0.0), C64::new(0.0, h)]).unwrap()
    }

    #[test]
    fn rejects_unnormalized_state() {
        assert!(BatteryState::new(reg(1), vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]).is_err());
        assert!(BatteryState::new(reg(1), vec![C64::new(1.0, 0.0)]).is_err());
    }

    #[test]
    fn sigma_y_expectation() {
        assert!((up_y().sigma_y(1) - 1.0).abs() < 1e-15);
        let s = discharged_state(reg(3));
        for site in 1..=3 {
            assert!((s.sigma_y(site) + 1.0).abs() < 1e-15);
            let direct = s.expectation(&pauli(site, Axis::Y, reg(3)).unwrap()).unwrap();
            assert!((direct.re - s.sigma_y(site)).abs() < 1e-15);
        }
    }

    #[test]
    fn discharged_populations() {
        let p = populations(&discharged_state(reg(5)));
        assert!((p.weights[0] - 1.0).abs() < 1e-14);
        assert!(p.weights[1..].iter().all(|w| w.abs() < 1e-14));
        assert_eq!(p.shifted_levels(), vec![0, 2, 4, 6, 8, 10]);
    }

    #[test]
    fn stored_energy_bounds_and_errors() {
        let s = discharged_state(reg(4));
        assert!(stored_energy_at(1.0, &s, 4).unwrap().abs() < 1e-14);
        assert!(stored_energy_at(1.0, &s, 0).is_err());
        assert!(stored_energy_at(1.0, &s, 5).is_err());
        assert!((stored_energy_at(1.0, &up_y(), 1).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn single_qubit_ergotropy() {
        let h = h0(reg(1), 1.0).unwrap();
        let rho = reduced_state(&up_y(), 1).unwrap();
        assert!((ergotropy(&rho, &h).unwrap() - 2.0).abs() < 1e-12);

        // populations 0.3 in |↓ʸ⟩ (ground), 0.7 in |↑ʸ⟩
        let up = up_y();
        let down = discharged_state(reg(1));
        let mut m = Mat::<C64>::zeros(2, 2);
        for (w, s) in [(0.7, &up), (0.3, &down)] {
            let a = s.amplitudes();
            for i in 0..2 {
                for j in 0..2 {
                    m[(i, j)] += a[i] * a[j].conj() * w;
                }
            }
        }
        let rho = DensityMatrix::new(m).unwrap();
        assert!((ergotropy(&rho, &h).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ergotropy_contract_errors() {
        let h = h0(reg(1), 1.0).unwrap();
        let bad = Mat::from_fn(2, 2, |i, j| C64::new(if i == j { [1.2, -0.2][i] } else { 0.0 }, 0.0));
        let rho = DensityMatrix { matrix: bad };
        assert!(matches!(ergotropy(&rho, &h), Err(Error::Contract(_))));
        let h2 = h0(reg(2), 1.0).unwrap();
        let rho = reduced_state(&up_y(), 1).unwrap();
        assert!(matches!(ergotropy(&rho, &h2), Err(Error::Argument(_))));
        assert!(DensityMatrix::new(Mat::from_fn(2, 2, |_, _| C64::new(0.5, 0.0))).is_ok());
        assert!(DensityMatrix::new(Mat::from_fn(2, 2, |_, _| C64::new(1.0, 0.0))).is_err());
    }

    #[test]
    fn bell_state_reduces_to_identity() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let z = C64::new(0.0, 0.0);
        let bell = BatteryState::new(reg(2), vec![C64::new(h, 0.0), z, z, C64::new(h, 0.0)]).unwrap();
        let rho = reduced_state(&bell, 1).unwrap();
        assert!((rho.matrix()[(0, 0)].re - 0.5).abs() < 1e-15);
        assert!(rho.matrix()[(0, 1)].norm() < 1e-15);
        assert!((rho.purity() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn efficiency_needs_even_sites_and_charge() {
        let tensor = CouplingTensor::realize(3, 1.0, 1.0, crate::syk::DisorderSeed::new(1, 0)).unwrap();
        let protocol = ChargingProtocol::new(1.0, tensor, 1.0).unwrap();
        let s = discharged_state(reg(3));
        assert!(matches!(efficiency(&protocol, &s), Err(Error::Argument(_))));

        let tensor = CouplingTensor::realize(4, 1.0, 1.0, crate::syk::DisorderSeed::new(1, 0)).unwrap();
        let protocol = ChargingProtocol::new(1.0, tensor, 1.0).unwrap();
        let s = discharged_state(reg(4));
        assert!(matches!(efficiency(&protocol, &s), Err(Error::UndefinedRatio(_))));
    }

    #[test]
    fn evolve_time_checks() {
        let tensor = CouplingTensor::realize(4, 1.0, 1.0, crate::syk::DisorderSeed::new(1, 0)).unwrap();
        let protocol = ChargingProtocol::new(1.0, tensor, 2.0).unwrap();
        let s = discharged_state(reg(4));
        assert_eq!(evolve(&protocol, &s, 0.0).unwrap(), s);
        assert!(evolve(&protocol, &s, -0.1).is_err());
        assert!(evolve(&protocol, &s, 2.5).is_err());
        assert!(ChargingProtocol::new(1.0, protocol.tensor.clone(), -1.0).is_err());
    }
}
