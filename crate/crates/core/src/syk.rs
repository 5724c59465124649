//! Random cSYK couplings, sparsification and the charging Hamiltonian.
//!
//! `H = Σ_{ijkl} J_ijkl ĉ†_i ĉ†_j ĉ_k ĉ_l` with all four indices running over
//! `1..=N` and `J_ijkl = -J_jikl = -J_ijlk = J*_klij`. Only canonical
//! representatives `(i<j, k<l)` with `pair(i,j) <= pair(k,l)` are stored;
//! each one stands for four index orderings of the same operator plus, off
//! the diagonal, its Hermitian partner.

use std::io::Write;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::operators::{annihilate, create, DenseOperator, QubitRegister, MAX_SITES};
use crate::sectors::{ChargeSector, SectorBlock};
use crate::C64;

/// Identifies one disorder realization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DisorderSeed {
    pub master_seed: u64,
    pub realization_index: u64,
}

/// Independent random streams attached to one realization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Couplings,
    Mask,
}

impl DisorderSeed {
    pub fn new(master_seed: u64, realization_index: u64) -> Self {
        Self {
            master_seed,
            realization_index,
        }
    }

    /// Counter-based generator: the key depends on `(master_seed, stream)`,
    /// the ChaCha stream id is the realization index.
    pub fn rng(&self, stream: Stream) -> ChaCha20Rng {
        let tag = match stream {
            Stream::Couplings => 0x636f_7570_6c69_6e67,
            Stream::Mask => 0x6d61_736b_5f5f_5f5f,
        };
        let mut state = self.master_seed ^ tag;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(self.realization_index);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One stored coupling `J_{ij,kl}` with `i<j`, `k<l`, `pair(i,j) <= pair(k,l)`.
/// Sites are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalCoupling {
    pub creators: (usize, usize),
    pub annihilators: (usize, usize),
    pub value: C64,
    pub kept: bool,
}

impl CanonicalCoupling {
    /// Entries with `(i,j) = (k,l)` are forced real by hermiticity.
    pub fn is_diagonal(&self) -> bool {
        self.creators == self.annihilators
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingTensor {
    n_sites: usize,
    j_scale: f64,
    sparsity: f64,
    entries: Vec<CanonicalCoupling>,
}

/// Ordered site pairs `(i<j)` in lexicographic order.
pub fn site_pairs(n_sites: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(n_sites * (n_sites - 1) / 2);
    for i in 1..=n_sites {
        for j in i + 1..=n_sites {
            pairs.push((i, j));
        }
    }
    pairs
}

fn pair_index(n_sites: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j);
    (i - 1) * n_sites - (i - 1) * i / 2 + (j - i - 1)
}

/// Number of canonical couplings, `M(M+1)/2` with `M = C(N,2)`.
pub fn canonical_count(n_sites: usize) -> usize {
    let m = n_sites * (n_sites - 1) / 2;
    m * (m + 1) / 2
}

/// Draws the fully connected tensor.
///
/// Off-diagonal entries are complex Gaussians with `E|J|² = J²/N³`, split
/// evenly between real and imaginary parts; diagonal entries are real with
/// the same variance.
pub fn draw_couplings(n_sites: usize, j_scale: f64, seed: DisorderSeed) -> Result<CouplingTensor> {
    if !(2..=MAX_SITES).contains(&n_sites) {
        return Err(argument(format!("n_sites {n_sites} outside 2..={MAX_SITES}")));
    }
    if !(j_scale > 0.0 && j_scale.is_finite()) {
        return Err(argument(format!("j_scale must be positive, got {j_scale}")));
    }
    let variance = j_scale * j_scale / (n_sites as f64).powi(3);
    let sigma = variance.sqrt();
    let half_sigma = (variance / 2.0).sqrt();
    let mut rng = seed.rng(Stream::Couplings);
    let pairs = site_pairs(n_sites);
    let mut entries = Vec::with_capacity(canonical_count(n_sites));
    for (a, &creators) in pairs.iter().enumerate() {
        for &annihilators in &pairs[a..] {
            let value = if creators == annihilators {
                C64::new(sigma * rng.sample::<f64, _>(StandardNormal), 0.0)
            } else {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                C64::new(half_sigma * re, half_sigma * im)
            };
            entries.push(CanonicalCoupling {
                creators,
                annihilators,
                value,
                kept: true,
            });
        }
    }
    Ok(CouplingTensor {
        n_sites,
        j_scale,
        sparsity: 1.0,
        entries,
    })
}

/// Bernoulli pruning of canonical couplings.
///
/// Each canonical entry draws one uniform `u` from the mask stream and is
/// kept when `u < p`; kept entries are rescaled by `1/√p`. The uniforms do
/// not depend on `p`, so masks for the same seed are nested in `p`. The
/// Hermitian partner of a coupling shares its fate.
pub fn apply_sparsity(tensor: &CouplingTensor, p: f64, seed: DisorderSeed) -> Result<CouplingTensor> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(argument(format!("sparsity p must lie in (0, 1], got {p}")));
    }
    let rescale = 1.0 / p.sqrt();
    let mut rng = seed.rng(Stream::Mask);
    let entries = tensor
        .entries
        .iter()
        .map(|e| {
            let u: f64 = rng.random();
            let kept = e.kept && u < p;
            CanonicalCoupling {
                value: if kept { e.value * rescale } else { C64::new(0.0, 0.0) },
                kept,
                ..*e
            }
        })
        .collect();
    Ok(CouplingTensor {
        n_sites: tensor.n_sites,
        j_scale: tensor.j_scale,
        sparsity: tensor.sparsity * p,
        entries,
    })
}

impl CouplingTensor {
    /// Draw and sparsify in one go, both from `seed`.
    pub fn realize(n_sites: usize, j_scale: f64, p: f64, seed: DisorderSeed) -> Result<Self> {
        apply_sparsity(&draw_couplings(n_sites, j_scale, seed)?, p, seed)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn j_scale(&self) -> f64 {
        self.j_scale
    }

    pub fn sparsity(&self) -> f64 {
        self.sparsity
    }

    pub fn entries(&self) -> &[CanonicalCoupling] {
        &self.entries
    }

    pub fn kept_count(&self) -> usize {
        self.entries.iter().filter(|e| e.kept).count()
    }

    /// Reconstructed `J_ijkl` for arbitrary 1-based indices.
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> C64 {
        let n = self.n_sites;
        assert!(
            [i, j, k, l].iter().all(|&s| (1..=n).contains(&s)),
            "index out of range"
        );
        if i == j || k == l {
            return C64::new(0.0, 0.0);
        }
        let mut sign = 1.0;
        let (i, j) = if i < j { (i, j) } else { sign = -sign; (j, i) };
        let (k, l) = if k < l { (k, l) } else { sign = -sign; (l, k) };
        let a = pair_index(n, i, j);
        let b = pair_index(n, k, l);
        let value = if a <= b {
            self.entries[self.offset(a, b)].value
        } else {
            self.entries[self.offset(b, a)].value.conj()
        };
        value * sign
    }

    fn offset(&self, a: usize, b: usize) -> usize {
        let m = self.n_sites * (self.n_sites - 1) / 2;
        // rows 0..a hold M, M-1, .., M-a+1 entries
        a * m - a * a.saturating_sub(1) / 2 + (b - a)
    }

    /// Full `N⁴` tensor, row-major in `(i, j, k, l)`.
    pub fn to_full(&self) -> Vec<C64> {
        let n = self.n_sites;
        let mut full = Vec::with_capacity(n.pow(4));
        for i in 1..=n {
            for j in 1..=n {
                for k in 1..=n {
                    for l in 1..=n {
                        full.push(self.get(i, j, k, l));
                    }
                }
            }
        }
        full
    }

    /// `K[a][b] = J_{pair a, pair b}` over ordered pairs; Hermitian.
    pub(crate) fn pair_matrix(&self) -> Vec<C64> {
        let m = self.n_sites * (self.n_sites - 1) / 2;
        let mut k = vec![C64::new(0.0, 0.0); m * m];
        let mut idx = 0;
        for a in 0..m {
            for b in a..m {
                let v = self.entries[idx].value;
                k[a * m + b] = v;
                k[b * m + a] = v.conj();
                idx += 1;
            }
        }
        k
    }

    /// One record per canonical index: `i,j,k,l,re,im,kept`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j,k,l,re,im,kept")?;
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{},{:?},{:?},{}",
                e.creators.0,
                e.creators.1,
                e.annihilators.0,
                e.annihilators.1,
                e.value.re,
                e.value.im,
                u8::from(e.kept)
            )?;
        }
        Ok(())
    }
}

/// Canonical values of a full `N⁴` tensor, after checking its symmetries.
pub fn canonicalize(n_sites: usize, full: &[C64], tol: f64) -> Result<Vec<C64>> {
    let n = n_sites;
    if full.len() != n.pow(4) {
        return Err(argument(format!("expected {} entries, got {}", n.pow(4), full.len())));
    }
    let at = |i: usize, j: usize, k: usize, l: usize| full[(((i - 1) * n + (j - 1)) * n + (k - 1)) * n + (l - 1)];
    let mut values = Vec::with_capacity(canonical_count(n));
    let pairs = site_pairs(n);
    for (a, &(i, j)) in pairs.iter().enumerate() {
        for &(k, l) in &pairs[a..] {
            let v = at(i, j, k, l);
            let partners = [-at(j, i, k, l), -at(i, j, l, k), at(k, l, i, j).conj()];
            if partners.iter().any(|p| (p - v).norm() > tol) {
                return Err(crate::error::contract(format!(
                    "tensor violates symmetries at ({i},{j},{k},{l})"
                )));
            }
            values.push(v);
        }
    }
    Ok(values)
}

/// Visits every nonzero matrix element `⟨out|H|in⟩` with `in` drawn from
/// `states`.
fn for_each_element(
    tensor: &CouplingTensor,
    register: QubitRegister,
    states: &[usize],
    mut visit: impl FnMut(usize, usize, C64),
) {
    let n = register.n_sites();
    let m = n * (n - 1) / 2;
    let pairs = site_pairs(n);
    let k = tensor.pair_matrix();
    for (col, &input) in states.iter().enumerate() {
        for (beta, &(ks, ls)) in pairs.iter().enumerate() {
            // ĉ_k ĉ_l: ĉ_l acts first
            let Some((b1, s1)) = annihilate(register, ls, input) else { continue };
            let Some((b2, s2)) = annihilate(register, ks, b1) else { continue };
            for (alpha, &(is, js)) in pairs.iter().enumerate() {
                let coupling = k[alpha * m + beta];
                if coupling.re == 0.0 && coupling.im == 0.0 {
                    continue;
                }
                let Some((b3, s3)) = create(register, js, b2) else { continue };
                let Some((out, s4)) = create(register, is, b3) else { continue };
                // four index orderings of each pair contribute equally
                visit(out, col, coupling * (4.0 * s1 * s2 * s3 * s4));
            }
        }
    }
}

fn check_sites(tensor: &CouplingTensor, register: QubitRegister) -> Result<()> {
    if tensor.n_sites != register.n_sites() {
        return Err(argument(format!(
            "tensor has {} sites, register has {}",
            tensor.n_sites,
            register.n_sites()
        )));
    }
    Ok(())
}

/// Dense charging Hamiltonian on the full register.
pub fn build_hamiltonian(tensor: &CouplingTensor, register: QubitRegister) -> Result<DenseOperator> {
    check_sites(tensor, register)?;
    let dim = register.dim();
    let states: Vec<usize> = (0..dim).collect();
    let mut h = Mat::<C64>::zeros(dim, dim);
    for_each_element(tensor, register, &states, |row, col, v| h[(row, col)] += v);
    DenseOperator::from_matrix(register, h)
}

/// Charging Hamiltonian restricted to one charge sector, built directly.
pub fn build_sector_hamiltonian(tensor: &CouplingTensor, sector: &ChargeSector) -> Result<SectorBlock> {
    check_sites(tensor, sector.register())?;
    let dim = sector.dim();
    let map = sector.index_map();
    let mut h = Mat::<C64>::zeros(dim, dim);
    for_each_element(tensor, sector.register(), sector.states(), |row, col, v| {
        let row = map[row].expect("cSYK terms conserve charge");
        h[(row, col)] += v;
    });
    Ok(SectorBlock {
        sector: sector.clone(),
        matrix: h,
    })
}
