//! Fixed-charge subspaces of the computational basis.

use faer::Mat;

use crate::error::{argument, Result};
use crate::operators::QubitRegister;
use crate::C64;

/// Basis states of one charge sector, in ascending basis-index order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChargeSector {
    register: QubitRegister,
    charge: usize,
    states: Vec<usize>,
}

impl ChargeSector {
    pub fn new(register: QubitRegister, charge: usize) -> Result<Self> {
        if charge > register.n_sites() {
            return Err(argument(format!(
                "charge {charge} exceeds register size {}",
                register.n_sites()
            )));
        }
        let states = (0..register.dim())
            .filter(|&b| register.charge_of(b) == charge)
            .collect();
        Ok(Self {
            register,
            charge,
            states,
        })
    }

    /// Half filling, `⌊N/2⌋`.
    pub fn half_filling(register: QubitRegister) -> Self {
        Self::new(register, register.n_sites() / 2).expect("half filling is always valid")
    }

    /// Every sector `0..=N`.
    pub fn all(register: QubitRegister) -> Vec<Self> {
        (0..=register.n_sites())
            .map(|m| Self::new(register, m).expect("charge in range"))
            .collect()
    }

    pub fn register(&self) -> QubitRegister {
        self.register
    }

    pub fn charge(&self) -> usize {
        self.charge
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    /// Position of each full-basis state inside this sector.
    pub fn index_map(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.register.dim()];
        for (pos, &b) in self.states.iter().enumerate() {
            map[b] = Some(pos);
        }
        map
    }
}

/// The block of an operator restricted to one charge sector.
#[derive(Clone, Debug)]
pub struct SectorBlock {
    pub sector: ChargeSector,
    pub matrix: Mat<C64>,
}

impl SectorBlock {
    pub fn dim(&self) -> usize {
        self.sector.dim()
    }
}
