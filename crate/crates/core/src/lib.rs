//! Exact diagonalization of sparse complex Sachdev-Ye-Kitaev (cSYK) quantum
//! batteries.
//!
//! The crate is organised bottom-up:
//!
//! - [`operators`]: qubit register, Pauli strings, Jordan-Wigner fermions,
//!   the battery Hamiltonian `H0 = ω0 Σ σʸ`, the charge operator and the
//!   discharged initial state.
//! - [`syk`]: random coupling tensors, Bernoulli sparsification and the
//!   charging Hamiltonian, either as a full dense matrix or per charge sector.
//! - [`spectra`]: Hermitian diagonalization, charge-sector blocks, the
//!   nearest-neighbour gap ratio, critical-sparsity scans and the spectral
//!   form factor.
//! - [`battery`]: time evolution, level populations, stored energy, reduced
//!   states, ergotropy and efficiency.
//! - [`ensemble`]: deterministic, checkpointed disorder averages.
//!
//! # Basis convention
//!
//! States live in the σᶻ product basis. Site 1 is the most significant bit
//! of the basis index. A bit value of 0 is |↑⟩ (σᶻ = +1), a bit value of 1
//! is |↓⟩. With `ĉ = (∏ σᶻ) σ⁻` an occupied fermion mode is |↑⟩, so the
//! charge of a basis state is the number of zero bits.

pub mod battery;
pub mod ensemble;
mod error;
pub mod operators;
pub mod sectors;
pub mod spectra;
pub mod stats;
pub mod syk;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Crate version recorded in provenance metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
