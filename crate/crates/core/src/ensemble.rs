//! Disorder-ensemble orchestration.
//!
//! Realization `i` of a run is fully determined by
//! `DisorderSeed(master_seed, i)`. Realizations are evaluated in chunks on a
//! rayon pool, collected in index order, appended to an optional
//! line-delimited JSON checkpoint and reduced in index order, so the result
//! does not depend on the number of workers.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::battery::{populations, stored_energy_at, HalfBattery, Propagator};
use crate::error::{argument, Error, Result};
use crate::operators::{discharged_state, QubitRegister, MAX_SITES};
use crate::sectors::ChargeSector;
use crate::spectra::{diagonalize, gap_ratio_of, partition_products, SffAveraging};
use crate::stats::Accumulator;
use crate::syk::{apply_sparsity, build_sector_hamiltonian, draw_couplings, CouplingTensor, DisorderSeed};

const CHECKPOINT_FORMAT: &str = "sparse-syk-checkpoint/1";

/// Which levels enter a spectral statistic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelSet {
    /// The charge sector `⌊N/2⌋`.
    #[default]
    HalfFilling,
    /// All charge sectors together.
    Full,
}

/// What is measured on each realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    /// Half-filling gap ratio at every `p` of a descending grid. The
    /// couplings and the mask uniforms are shared across the grid.
    GapRatio { p_grid: Vec<f64> },
    /// `Re[Z(β+it)Z(β-it)]` for each time, then `Z(β)²`. With
    /// average-of-ratios the per-time values are divided by `Z(β)²` first.
    FormFactor {
        sparsity: f64,
        beta: f64,
        times: Vec<f64>,
        levels: LevelSet,
        #[serde(default)]
        averaging: SffAveraging,
    },
    /// `E_subset(τ)` for each charging time.
    StoredEnergy {
        sparsity: f64,
        taus: Vec<f64>,
        subset: usize,
    },
    /// Half-battery stored energy, ergotropy and their ratio: three blocks
    /// of `taus.len()` values each.
    Efficiency { sparsity: f64, taus: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_sites: usize,
    pub j_scale: f64,
    pub omega0: f64,
    pub n_dis: usize,
    pub master_seed: u64,
    pub observable: Observable,
}

fn check_sparsity(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(argument(format!("sparsity must lie in (0, 1], got {p}")))
    }
}

fn check_ascending(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(argument(format!("{name} grid is empty")));
    }
    if grid.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(argument(format!("{name} grid values must be finite and non-negative")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(argument(format!("{name} grid must be strictly ascending")));
    }
    Ok(())
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_SITES).contains(&self.n_sites) {
            return Err(argument(format!("n_sites {} outside 2..={MAX_SITES}", self.n_sites)));
        }
        if !(self.j_scale > 0.0 && self.j_scale.is_finite()) {
            return Err(argument("j_scale must be positive"));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(argument("omega0 must be positive"));
        }
        if self.n_dis == 0 {
            return Err(argument("n_dis must be at least 1"));
        }
        match &self.observable {
            Observable::GapRatio { p_grid } => {
                if p_grid.is_empty() {
                    return Err(argument("p grid is empty"));
                }
                p_grid.iter().try_for_each(|&p| check_sparsity(p))?;
                if p_grid.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(argument("p grid must be strictly descending"));
                }
            }
            Observable::FormFactor {
                sparsity,
                beta,
                times,
                ..
            } => {
                check_sparsity(*sparsity)?;
                if !beta.is_finite() {
                    return Err(argument("beta must be finite"));
                }
                check_ascending("time", times)?;
            }
            Observable::StoredEnergy {
                sparsity,
                taus,
                subset,
            } => {
                check_sparsity(*sparsity)?;
                check_ascending("tau", taus)?;
                if *subset == 0 || *subset > self.n_sites {
                    return Err(argument(format!("subset {subset} outside 1..={}", self.n_sites)));
                }
            }
            Observable::Efficiency { sparsity, taus } => {
                check_sparsity(*sparsity)?;
                check_ascending("tau", taus)?;
                if self.n_sites % 2 != 0 {
                    return Err(argument("efficiency needs an even number of sites"));
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Number of values recorded per realization.
    pub fn point_count(&self) -> usize {
        match &self.observable {
            Observable::GapRatio { p_grid } => p_grid.len(),
            Observable::FormFactor { times, .. } => times.len() + 1,
            Observable::StoredEnergy { taus, .. } => taus.len(),
            Observable::Efficiency { taus, .. } => 3 * taus.len(),
        }
    }

    pub fn seed(&self, index: u64) -> DisorderSeed {
        DisorderSeed::new(self.master_seed, index)
    }

    fn tensor(&self, sparsity: f64, seed: DisorderSeed) -> Result<CouplingTensor> {
        CouplingTensor::realize(self.n_sites, self.j_scale, sparsity, seed)
    }

    /// Measures one realization. Failures are recorded, never propagated.
    pub fn evaluate(&self, index: u64) -> Realization {
        let mut notes = Vec::new();
        let values = match self.measure(index, &mut notes) {
            Ok(values) => values,
            Err(e) => {
                notes.push(e.kind().to_string());
                vec![None; self.point_count()]
            }
        };
        notes.sort();
        notes.dedup();
        Realization {
            index,
            values,
            notes,
        }
    }

    fn measure(&self, index: u64, notes: &mut Vec<String>) -> Result<Vec<Option<f64>>> {
        let seed = self.seed(index);
        let register = QubitRegister::new(self.n_sites)?;
        let mut keep = |r: Result<f64>| -> Result<Option<f64>> {
            match r {
                Ok(v) => Ok(Some(v)),
                Err(e @ (Error::InsufficientData(_) | Error::UndefinedRatio(_))) => {
                    notes.push(e.kind().to_string());
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        };
        match &self.observable {
            Observable::GapRatio { p_grid } => {
                let full = draw_couplings(self.n_sites, self.j_scale, seed)?;
                let sector = ChargeSector::half_filling(register);
                let mut values = Vec::with_capacity(p_grid.len());
                let mut previous: Option<(Vec<bool>, Option<f64>)> = None;
                for &p in p_grid {
                    let tensor = apply_sparsity(&full, p, seed)?;
                    let mask: Vec<bool> = tensor.entries().iter().map(|e| e.kept).collect();
                    // same kept set: the Hamiltonian only changes by an overall
                    // scale, which leaves the gap ratio untouched
                    if let Some((prev_mask, prev_r)) = &previous {
                        if *prev_mask == mask {
                            values.push(*prev_r);
                            continue;
                        }
                    }
                    let block = build_sector_hamiltonian(&tensor, &sector)?;
                    let levels = diagonalize(&block, false)?.into_parts().0;
                    let r = keep(gap_ratio_of(&levels))?;
                    values.push(r);
                    previous = Some((mask, r));
                }
                Ok(values)
            }
            Observable::FormFactor {
                sparsity,
                beta,
                times,
                levels,
                averaging,
            } => {
                let tensor = self.tensor(*sparsity, seed)?;
                let sectors = match levels {
                    LevelSet::HalfFilling => vec![ChargeSector::half_filling(register)],
                    LevelSet::Full => ChargeSector::all(register),
                };
                let mut energies = Vec::with_capacity(register.dim());
                for sector in &sectors {
                    let block = build_sector_hamiltonian(&tensor, sector)?;
                    energies.extend(diagonalize(&block, false)?.into_parts().0);
                }
                energies.sort_by(f64::total_cmp);
                let (mut nums, den) = partition_products(&energies, *beta, times)?;
                if *averaging == SffAveraging::AverageOfRatios {
                    nums.iter_mut().for_each(|x| *x /= den);
                }
                nums.push(den);
                Ok(nums.into_iter().map(Some).collect())
            }
            Observable::StoredEnergy {
                sparsity,
                taus,
                subset,
            } => {
                let propagator = Propagator::new(&self.tensor(*sparsity, seed)?)?;
                let expansion = propagator.expand(&discharged_state(register))?;
                taus.iter()
                    .map(|&tau| {
                        let state = expansion.at(tau)?;
                        Ok(Some(stored_energy_at(self.omega0, &state, *subset)?))
                    })
                    .collect()
            }
            Observable::Efficiency { sparsity, taus } => {
                let propagator = Propagator::new(&self.tensor(*sparsity, seed)?)?;
                let expansion = propagator.expand(&discharged_state(register))?;
                let half = HalfBattery::new(register, self.omega0)?;
                let mut stored = Vec::with_capacity(taus.len());
                let mut work = Vec::with_capacity(taus.len());
                let mut ratio = Vec::with_capacity(taus.len());
                for &tau in taus {
                    let reading = half.read(&expansion.at(tau)?)?;
                    stored.push(Some(reading.stored));
                    work.push(Some(reading.ergotropy));
                    ratio.push(keep(reading.efficiency(self.omega0))?);
                }
                stored.extend(work);
                stored.extend(ratio);
                Ok(stored)
            }
        }
    }
}

/// Values measured on one realization; `None` marks an excluded point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub index: u64,
    pub values: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointStat {
    pub mean: Option<f64>,
    /// `None` when fewer than two realizations contributed.
    pub stderr: Option<f64>,
    pub n_eff: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub spec: EnsembleSpec,
    pub spec_hash: String,
    pub version: String,
    pub points: Vec<PointStat>,
    /// Realizations carrying each exclusion reason.
    pub exclusions: BTreeMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Rayon worker threads; 0 picks the rayon default.
    pub workers: usize,
    pub checkpoint: Option<PathBuf>,
    /// Realizations per checkpoint flush.
    pub checkpoint_every: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            checkpoint: None,
            checkpoint_every: 64,
        }
    }
}

impl RunOptions {
    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers,
            ..Self::default()
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    spec_hash: String,
    spec: EnsembleSpec,
}

/// Reduces realizations in index order.
pub fn reduce(spec: &EnsembleSpec, records: &[Realization]) -> EnsembleResult {
    let mut accs = vec![Accumulator::new(); spec.point_count()];
    let mut exclusions = BTreeMap::new();
    for record in records {
        for (acc, v) in accs.iter_mut().zip(&record.values) {
            if let Some(v) = v {
                acc.push(*v);
            }
        }
        for note in &record.notes {
            *exclusions.entry(note.clone()).or_insert(0) += 1;
        }
    }
    let points = accs
        .iter()
        .map(|acc| PointStat {
            mean: (acc.count() > 0).then(|| acc.mean()),
            stderr: acc.stderr(),
            n_eff: acc.count(),
            excluded: records.len() - acc.count(),
        })
        .collect();
    EnsembleResult {
        spec: spec.clone(),
        spec_hash: spec.hash(),
        version: crate::VERSION.to_string(),
        points,
        exclusions,
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| argument(format!("cannot start worker pool: {e}")))
}

fn continue_run(
    spec: &EnsembleSpec,
    options: &RunOptions,
    mut records: Vec<Realization>,
    mut sink: Option<BufWriter<File>>,
) -> Result<EnsembleResult> {
    let pool = pool(options.workers)?;
    let chunk = options.checkpoint_every.max(1) as u64;
    let n_dis = spec.n_dis as u64;
    let mut start = records.len() as u64;
    while start < n_dis {
        let end = (start + chunk).min(n_dis);
        let batch: Vec<Realization> =
            pool.install(|| (start..end).into_par_iter().map(|i| spec.evaluate(i)).collect());
        if let Some(w) = sink.as_mut() {
            for r in &batch {
                serde_json::to_writer(&mut *w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        records.extend(batch);
        start = end;
    }
    Ok(reduce(spec, &records))
}

/// Runs every realization of `spec`.
pub fn run(spec: &EnsembleSpec, options: &RunOptions) -> Result<EnsembleResult> {
    spec.validate()?;
    let sink = match &options.checkpoint {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            let header = CheckpointHeader {
                format: CHECKPOINT_FORMAT.to_string(),
                spec_hash: spec.hash(),
                spec: spec.clone(),
            };
            serde_json::to_writer(&mut w, &header)?;
            w.write_all(b"\n")?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    continue_run(spec, options, Vec::new(), sink)
}

fn corrupt(line: usize, what: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("corrupt checkpoint at line {line}: {what}"))
}

/// Reads a checkpoint without running anything.
///
/// A final line without its newline is the trace of an interrupted write and
/// is ignored; any other malformed line is an error.
pub fn read_checkpoint(path: &Path) -> Result<(EnsembleSpec, Vec<Realization>)> {
    let (spec, records, _) = parse_checkpoint(path)?;
    Ok((spec, records))
}

fn parse_checkpoint(path: &Path) -> Result<(EnsembleSpec, Vec<Realization>, u64)> {
    let bytes = std::fs::read(path)?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let text = std::str::from_utf8(&bytes[..complete]).map_err(|e| corrupt(0, e))?;
    let mut lines = text.lines();
    let header_line = lines.next().ok_or_else(|| corrupt(1, "missing header"))?;
    let header: CheckpointHeader = serde_json::from_str(header_line).map_err(|e| corrupt(1, e))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(corrupt(1, format!("unknown format {:?}", header.format)));
    }
    if header.spec.hash() != header.spec_hash {
        return Err(corrupt(1, "spec hash does not match the stored spec"));
    }
    let spec = header.spec;
    let points = spec.point_count();
    let mut records = Vec::new();
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let record: Realization = serde_json::from_str(line).map_err(|e| corrupt(line_no, e))?;
        if record.index != records.len() as u64 || record.index >= spec.n_dis as u64 {
            return Err(corrupt(line_no, format!("unexpected realization index {}", record.index)));
        }
        if record.values.len() != points {
            return Err(corrupt(line_no, "wrong number of values"));
        }
        records.push(record);
    }
    Ok((spec, records, complete as u64))
}

/// Continues a checkpointed run from its first missing realization.
///
/// With `expected` set, a checkpoint written for a different spec is
/// refused. The checkpoint is only touched after it parsed cleanly.
pub fn resume(path: &Path, expected: Option<&EnsembleSpec>, options: &RunOptions) -> Result<EnsembleResult> {
    let (spec, records, complete) = parse_checkpoint(path)?;
    if let Some(expected) = expected {
        if expected.hash() != spec.hash() {
            return Err(Error::Checkpoint(format!(
                "spec hash mismatch: checkpoint {}, requested {}",
                spec.hash(),
                expected.hash()
            )));
        }
    }
    spec.validate()?;
    if records.len() == spec.n_dis {
        return Ok(reduce(&spec, &records));
    }
    let mut file = OpenOptions::new().write(true).open(path)?;
    file.set_len(complete)?;
    file.seek(SeekFrom::End(0))?;
    continue_run(&spec, options, records, Some(BufWriter::new(file)))
}

/// How the efficiency ratio is averaged over disorder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioAveraging {
    /// Mean of per-realization `ℰ/E`.
    #[default]
    AverageOfRatios,
    /// Mean `ℰ` over mean `E`.
    RatioOfAverages,
}

/// Efficiency at the charging time that maximizes the mean half-battery
/// stored energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySummary {
    pub sparsity: f64,
    pub tau_star: f64,
    pub e_mean: Option<f64>,
    pub e_stderr: Option<f64>,
    pub n_eff: usize,
    pub n_excluded: usize,
    pub stored_mean: Option<f64>,
    pub ergotropy_mean: Option<f64>,
    pub averaging: RatioAveraging,
}

impl EfficiencySummary {
    pub fn from_result(result: &EnsembleResult, averaging: RatioAveraging) -> Result<Self> {
        let Observable::Efficiency { sparsity, taus } = &result.spec.observable else {
            return Err(argument("ensemble result is not an efficiency run"));
        };
        let n = taus.len();
        let stored = &result.points[..n];
        let work = &result.points[n..2 * n];
        let ratio = &result.points[2 * n..];
        let mut best = 0;
        for k in 1..n {
            if stored[k].mean.unwrap_or(f64::NEG_INFINITY) > stored[best].mean.unwrap_or(f64::NEG_INFINITY) {
                best = k;
            }
        }
        let (e_mean, e_stderr, n_eff, n_excluded) = match averaging {
            RatioAveraging::AverageOfRatios => {
                let r = ratio[best];
                (r.mean, r.stderr, r.n_eff, r.excluded)
            }
            RatioAveraging::RatioOfAverages => {
                let (s, w) = (stored[best], work[best]);
                let e = match (w.mean, s.mean) {
                    (Some(w), Some(s)) if s.abs() > 0.0 => Some(w / s),
                    _ => None,
                };
                // spread of the ergotropy only; the denominator is treated as exact
                let se = match (work[best].stderr, s.mean) {
                    (Some(se), Some(s)) if s.abs() > 0.0 => Some(se / s.abs()),
                    _ => None,
                };
                (e, se, s.n_eff, s.excluded)
            }
        };
        Ok(Self {
            sparsity: *sparsity,
            tau_star: taus[best],
            e_mean,
            e_stderr,
            n_eff,
            n_excluded,
            stored_mean: stored[best].mean,
            ergotropy_mean: work[best].mean,
            averaging,
        })
    }
}

/// Populations of one realization along a time grid; no disorder average.
pub fn population_dynamics(
    n_sites: usize,
    j_scale: f64,
    sparsity: f64,
    seed: DisorderSeed,
    times: &[f64],
) -> Result<Vec<crate::battery::PopulationRecord>> {
    let register = QubitRegister::new(n_sites)?;
    let propagator = Propagator::new(&CouplingTensor::realize(n_sites, j_scale, sparsity, seed)?)?;
    let expansion = propagator.expand(&discharged_state(register))?;
    times
        .iter()
        .map(|&time| {
            Ok(crate::battery::PopulationRecord {
                time,
                populations: populations(&expansion.at(time)?),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gap_spec(n_dis: usize) -> EnsembleSpec {
        EnsembleSpec {
            n_sites: 4,
            j_scale: 1.0,
            omega0: 1.0,
            n_dis,
            master_seed: 7,
            observable: Observable::GapRatio {
                p_grid: vec![1.0, 0.5],
            },
        }
    }

    #[test]
    fn single_realization_has_no_error_bar() {
        let r = run(&gap_spec(1), &RunOptions::default()).unwrap();
        assert!(r.points.iter().all(|p| p.stderr.is_none() && p.n_eff + p.excluded == 1));
    }

    #[test]
    fn validation() {
        let mut spec = gap_spec(0);
        assert!(spec.validate().is_err());
        spec.n_dis = 3;
        spec.observable = Observable::GapRatio { p_grid: vec![0.5, 1.0] };
        assert!(spec.validate().is_err());
        spec.observable = Observable::Efficiency {
            sparsity: 1.0,
            taus: vec![],
        };
        assert!(spec.validate().is_err());
        spec.n_sites = 5;
        spec.observable = Observable::Efficiency {
            sparsity: 1.0,
            taus: vec![1.0],
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn hash_tracks_spec() {
        let a = gap_spec(3);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
