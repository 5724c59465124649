//! Spectral diagnostics: diagonalization, charge-sector blocks, the
//! nearest-neighbour gap ratio, critical-sparsity scans and the spectral
//! form factor.

use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::ensemble::{self, EnsembleResult, EnsembleSpec, Observable, RunOptions};
use crate::error::{argument, contract, Error, Result};
use crate::operators::{hermitian_deviation, max_abs, DenseOperator};
use crate::sectors::{ChargeSector, SectorBlock};
use crate::stats::Accumulator;
use crate::C64;

/// Inputs with `max|M - M†|` above this are rejected.
pub const HERMITICITY_TOL: f64 = 1e-10;

/// Spacings below this fraction of the spectral width count as exact
/// degeneracies.
pub const DEGENERACY_REL_TOL: f64 = 1e-12;

/// Fraction of the fully connected gap ratio that defines `p₂`.
pub const P2_THRESHOLD: f64 = 0.99;

/// Anything that can hand out a square complex matrix for diagonalization.
pub trait HermitianMatrix {
    fn as_mat(&self) -> MatRef<'_, C64>;
}

impl HermitianMatrix for DenseOperator {
    fn as_mat(&self) -> MatRef<'_, C64> {
        self.matrix().as_ref()
    }
}

impl HermitianMatrix for SectorBlock {
    fn as_mat(&self) -> MatRef<'_, C64> {
        self.matrix.as_ref()
    }
}

impl HermitianMatrix for Mat<C64> {
    fn as_mat(&self) -> MatRef<'_, C64> {
        self.as_ref()
    }
}

/// Ascending eigenvalues with optional eigenvector columns.
#[derive(Clone, Debug)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    eigenvectors: Option<Mat<C64>>,
}

impl Spectrum {
    /// Wraps a list of levels, sorting them.
    pub fn from_levels(mut levels: Vec<f64>) -> Self {
        levels.sort_by(f64::total_cmp);
        Self {
            eigenvalues: levels,
            eigenvectors: None,
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> Option<&Mat<C64>> {
        self.eigenvectors.as_ref()
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn into_parts(self) -> (Vec<f64>, Option<Mat<C64>>) {
        (self.eigenvalues, self.eigenvectors)
    }
}

pub fn diagonalize<M: HermitianMatrix + ?Sized>(op: &M, with_vectors: bool) -> Result<Spectrum> {
    let m = op.as_mat();
    if m.nrows() != m.ncols() {
        return Err(argument(format!("matrix is {}x{}", m.nrows(), m.ncols())));
    }
    let owned = m.to_owned();
    let deviation = hermitian_deviation(&owned);
    if deviation > HERMITICITY_TOL {
        return Err(contract(format!("operator is not Hermitian (deviation {deviation:e})")));
    }
    // The QR iteration occasionally stalls on very sparse inputs (mostly zero
    // rows). A diagonal shift leaves the eigenvectors alone and moves every
    // level by the same amount, so retry with a couple of shifts.
    let scale = max_abs(&owned).max(1.0);
    for shift in [0.0, scale, 2.5 * scale] {
        let mut shifted = owned.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += C64::new(shift, 0.0);
        }
        if with_vectors {
            let Ok(evd) = shifted.self_adjoint_eigen(Side::Lower) else {
                continue;
            };
            let eigenvalues: Vec<f64> = evd.S().column_vector().iter().map(|z| z.re - shift).collect();
            debug_assert!(eigenvalues.windows(2).all(|w| w[0] <= w[1]));
            return Ok(Spectrum {
                eigenvalues,
                eigenvectors: Some(evd.U().to_owned()),
            });
        } else if let Ok(levels) = shifted.self_adjoint_eigenvalues(Side::Lower) {
            return Ok(Spectrum {
                eigenvalues: levels.into_iter().map(|x| x - shift).collect(),
                eigenvectors: None,
            });
        }
    }
    Err(Error::Eigen)
}

/// The block of a charge-conserving operator on the charge-`m` subspace.
pub fn sector_restrict(op: &DenseOperator, charge_m: usize) -> Result<SectorBlock> {
    let register = op.register();
    let sector = ChargeSector::new(register, charge_m)?;
    let tol = HERMITICITY_TOL * max_abs(op.matrix()).max(1.0);
    let mut leak = 0.0f64;
    for col in 0..op.dim() {
        let qc = register.charge_of(col);
        for row in 0..op.dim() {
            if register.charge_of(row) != qc {
                leak = leak.max(op.get(row, col).norm());
            }
        }
    }
    if leak > tol {
        return Err(contract(format!(
            "operator does not commute with the charge (cross-sector element {leak:e})"
        )));
    }
    let states = sector.states();
    let matrix = Mat::from_fn(states.len(), states.len(), |i, j| op.get(states[i], states[j]));
    Ok(SectorBlock { sector, matrix })
}

/// Mean of `min(s_i/s_{i+1}, s_{i+1}/s_i)` over consecutive level spacings.
pub fn gap_ratio(spectrum: &Spectrum) -> Result<f64> {
    gap_ratio_of(spectrum.eigenvalues())
}

/// [`gap_ratio`] on a raw level list (sorted or not).
pub fn gap_ratio_of(levels: &[f64]) -> Result<f64> {
    let mut levels = levels.to_vec();
    levels.sort_by(f64::total_cmp);
    let width = match (levels.first(), levels.last()) {
        (Some(lo), Some(hi)) => hi - lo,
        _ => 0.0,
    };
    let floor = DEGENERACY_REL_TOL * width;
    let spacings: Vec<f64> = levels
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&s| s > floor)
        .collect();
    if spacings.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} distinct levels, need at least 3",
            spacings.len() + usize::from(!levels.is_empty())
        )));
    }
    let sum: f64 = spacings
        .windows(2)
        .map(|w| (w[0] / w[1]).min(w[1] / w[0]))
        .sum();
    Ok(sum / (spacings.len() - 1) as f64)
}

/// Disorder-averaged gap ratio at one sparsity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRatioPoint {
    pub p: f64,
    pub r_mean: Option<f64>,
    pub r_stderr: Option<f64>,
    pub n_eff: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRatioCurve {
    pub n_sites: usize,
    pub j_scale: f64,
    pub n_dis: usize,
    pub master_seed: u64,
    /// Descending in `p`; the first point is `p = 1`.
    pub points: Vec<GapRatioPoint>,
}

impl GapRatioCurve {
    pub fn from_ensemble(result: &EnsembleResult) -> Result<Self> {
        let Observable::GapRatio { p_grid } = &result.spec.observable else {
            return Err(argument("ensemble result is not a gap-ratio scan"));
        };
        let points = p_grid
            .iter()
            .zip(&result.points)
            .map(|(&p, stat)| GapRatioPoint {
                p,
                r_mean: stat.mean,
                r_stderr: stat.stderr,
                n_eff: stat.n_eff,
                excluded: stat.excluded,
            })
            .collect();
        Ok(Self {
            n_sites: result.spec.n_sites,
            j_scale: result.spec.j_scale,
            n_dis: result.spec.n_dis,
            master_seed: result.spec.master_seed,
            points,
        })
    }

    pub fn at(&self, p: f64) -> Option<&GapRatioPoint> {
        self.points.iter().find(|pt| pt.p == p)
    }
}

/// Critical sparsity with a one-sigma bracket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct P2Estimate {
    pub p2: f64,
    /// `(lower, upper)` from the curve shifted by ±1 combined standard error.
    pub interval: (f64, f64),
    pub threshold: f64,
    pub curve: GapRatioCurve,
}

impl P2Estimate {
    /// Half-width of the bracket, a rough standard error on `p₂`.
    pub fn sigma(&self) -> f64 {
        0.5 * (self.interval.1 - self.interval.0)
    }
}

/// Log-spaced descending grid from 1 down to `p_min`, `per_decade` points
/// per decade; always starts exactly at 1.
pub fn log_grid(p_min: f64, per_decade: usize) -> Vec<f64> {
    let decades = -p_min.log10();
    let steps = (decades * per_decade as f64).ceil() as usize;
    (0..=steps)
        .map(|k| {
            if k == 0 {
                1.0
            } else {
                10f64.powf(-(k as f64) / per_decade as f64)
            }
        })
        .collect()
}

fn validate_p_grid(p_grid: &[f64]) -> Result<()> {
    if p_grid.first() != Some(&1.0) {
        return Err(argument("p grid must start at 1.0"));
    }
    if p_grid.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(argument("p grid values must lie in (0, 1]"));
    }
    if p_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(argument("p grid must be strictly descending"));
    }
    Ok(())
}

/// Disorder-averaged half-filling gap ratio over `p_grid`, and the
/// sparsity where it first falls below 99% of its `p = 1` value.
pub fn find_p2(
    n_sites: usize,
    j_scale: f64,
    p_grid: &[f64],
    n_dis: usize,
    master_seed: u64,
    options: &RunOptions,
) -> Result<P2Estimate> {
    validate_p_grid(p_grid)?;
    if n_dis < 100 {
        return Err(argument(format!("n_dis must be at least 100, got {n_dis}")));
    }
    let spec = EnsembleSpec {
        n_sites,
        j_scale,
        omega0: 1.0,
        n_dis,
        master_seed,
        observable: Observable::GapRatio {
            p_grid: p_grid.to_vec(),
        },
    };
    let result = ensemble::run(&spec, options)?;
    locate_p2(GapRatioCurve::from_ensemble(&result)?)
}

/// Threshold crossing on an already computed curve.
pub fn locate_p2(curve: GapRatioCurve) -> Result<P2Estimate> {
    let first = curve.points.first().ok_or_else(|| argument("empty curve"))?;
    let (Some(r1), true) = (first.r_mean, first.p == 1.0) else {
        return Err(Error::NoCrossing(Box::new(curve)));
    };
    let threshold = P2_THRESHOLD * r1;
    let se1 = first.r_stderr.unwrap_or(0.0) * P2_THRESHOLD;
    let shifted = |sign: f64| -> Vec<(f64, f64)> {
        curve
            .points
            .iter()
            .filter_map(|pt| {
                let r = pt.r_mean?;
                let se = pt.r_stderr.unwrap_or(0.0);
                Some((pt.p, r + sign * (se * se + se1 * se1).sqrt()))
            })
            .collect()
    };
    let central: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter_map(|pt| pt.r_mean.map(|r| (pt.p, r)))
        .collect();
    let Some(p2) = crossing(&central, threshold) else {
        return Err(Error::NoCrossing(Box::new(curve)));
    };
    let p_floor = central.last().map_or(p2, |c| c.0);
    let lower = crossing(&shifted(1.0), threshold).unwrap_or(p_floor).min(p2);
    let upper = crossing(&shifted(-1.0), threshold).unwrap_or(1.0).max(p2);
    Ok(P2Estimate {
        p2,
        interval: (lower, upper),
        threshold,
        curve,
    })
}

/// First downward crossing of `threshold`, interpolated linearly in `ln p`.
fn crossing(points: &[(f64, f64)], threshold: f64) -> Option<f64> {
    let below = points.iter().skip(1).position(|&(_, r)| r < threshold)? + 1;
    let (pa, ra) = points[below - 1];
    let (pb, rb) = points[below];
    if ra < threshold {
        return Some(pa);
    }
    let frac = (ra - threshold) / (ra - rb);
    Some((pa.ln() + frac * (pb.ln() - pa.ln())).exp())
}

/// How the numerator and denominator of the form factor are averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SffAveraging {
    /// `⟨Z(β+it)Z(β-it)⟩ / ⟨Z(β)²⟩`.
    #[default]
    RatioOfAverages,
    /// `⟨Z(β+it)Z(β-it) / Z(β)²⟩`.
    AverageOfRatios,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SffCurve {
    pub beta: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Standard error of each value; `None` for a single realization.
    pub stderr: Vec<Option<f64>>,
    pub averaging: SffAveraging,
}

/// Per-realization form-factor ingredients: `Re[Z(β+it)Z(β-it)]` for each
/// time, and `Z(β)²`.
pub fn partition_products(levels: &[f64], beta: f64, times: &[f64]) -> Result<(Vec<f64>, f64)> {
    let weights: Vec<f64> = levels.iter().map(|&e| (-beta * e).exp()).collect();
    let z_beta: f64 = weights.iter().sum();
    let mut numerators = Vec::with_capacity(times.len());
    for &t in times {
        let mut plus = C64::new(0.0, 0.0);
        let mut minus = C64::new(0.0, 0.0);
        for (&e, &w) in levels.iter().zip(&weights) {
            let (s, c) = (e * t).sin_cos();
            plus += C64::new(w * c, -w * s);
            minus += C64::new(w * c, w * s);
        }
        let product = plus * minus;
        if product.im.abs() > 1e-12 * product.re.abs().max(f64::MIN_POSITIVE) {
            return Err(contract(format!(
                "Z(β+it)Z(β-it) has imaginary residue {:e} at t = {t}",
                product.im
            )));
        }
        numerators.push(product.re);
    }
    Ok((numerators, z_beta * z_beta))
}

fn validate_sff_inputs(beta: f64, times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(argument("time grid is empty"));
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(argument("times must be finite and non-negative"));
    }
    if !beta.is_finite() {
        return Err(argument("beta must be finite"));
    }
    Ok(())
}

/// Spectral form factor averaged over `realizations`.
pub fn sff(
    realizations: &[Spectrum],
    beta: f64,
    times: &[f64],
    averaging: SffAveraging,
) -> Result<SffCurve> {
    if realizations.is_empty() {
        return Err(argument("no realizations supplied"));
    }
    validate_sff_inputs(beta, times)?;
    let samples = realizations
        .iter()
        .map(|s| partition_products(s.eigenvalues(), beta, times))
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce_sff(&samples, beta, times, averaging))
}

/// Combines per-realization `(numerators, denominator)` pairs.
pub fn reduce_sff(
    samples: &[(Vec<f64>, f64)],
    beta: f64,
    times: &[f64],
    averaging: SffAveraging,
) -> SffCurve {
    let den: Accumulator = samples.iter().map(|s| s.1).collect();
    let (values, stderr) = (0..times.len())
        .map(|k| match averaging {
            SffAveraging::RatioOfAverages => {
                let num: Accumulator = samples.iter().map(|s| s.0[k]).collect();
                (num.mean() / den.mean(), num.stderr().map(|e| e / den.mean()))
            }
            SffAveraging::AverageOfRatios => {
                let ratio: Accumulator = samples.iter().map(|s| s.0[k] / s.1).collect();
                (ratio.mean(), ratio.stderr())
            }
        })
        .unzip();
    SffCurve {
        beta,
        times: times.to_vec(),
        values,
        stderr,
        averaging,
    }
}

/// Rebuilds an [`SffCurve`] from a form-factor ensemble run
/// (ratio-of-averages only; the per-realization ratios are not retained).
pub fn sff_from_ensemble(result: &EnsembleResult) -> Result<SffCurve> {
    let Observable::FormFactor {
        beta,
        times,
        averaging,
        ..
    } = &result.spec.observable
    else {
        return Err(argument("ensemble result is not a form-factor run"));
    };
    let den = match averaging {
        SffAveraging::RatioOfAverages => result
        .points
        .last()
        .and_then(|p| p.mean)
        .ok_or_else(|| Error::InsufficientData("no valid realizations".into()))?,
        SffAveraging::AverageOfRatios => 1.0,
    };
    let mut values = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for stat in &result.points[..times.len()] {
        let num = stat
            .mean
            .ok_or_else(|| Error::InsufficientData("no valid realizations".into()))?;
        values.push(num / den);
        stderr.push(stat.stderr.map(|e| e / den));
    }
    Ok(SffCurve {
        beta: *beta,
        times: times.clone(),
        values,
        stderr,
        averaging: *averaging,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{charge, h0, QubitRegister};

    #[test]
    fn diagonal_matrix() {
        let m = Mat::from_fn(3, 3, |i, j| {
            if i == j {
                C64::new([3.0, 1.0, 2.0][i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let s = diagonalize(&m, false).unwrap();
        assert_eq!(s.eigenvalues(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn h0_three_sites() {
        let h = h0(QubitRegister::new(3).unwrap(), 1.0).unwrap();
        let s = diagonalize(&h, false).unwrap();
        let expected = [-3.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 3.0];
        for (a, b) in s.eigenvalues().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = Mat::from_fn(2, 2, |i, j| C64::new((i * 2 + j) as f64, 0.0));
        assert!(matches!(diagonalize(&m, true), Err(Error::Contract(_))));
    }

    #[test]
    fn gap_ratio_small_cases() {
        assert_eq!(gap_ratio_of(&[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(gap_ratio_of(&[0.0, 1.0, 3.0]).unwrap(), 0.5);
        assert!(matches!(gap_ratio_of(&[0.0, 1.0]), Err(Error::InsufficientData(_))));
        // exact degeneracies are dropped, leaving three distinct levels
        assert_eq!(gap_ratio_of(&[0.0, 0.0, 1.0, 1.0, 3.0]).unwrap(), 0.5);
        assert!(gap_ratio_of(&[2.0, 2.0, 2.0]).is_err());
    }

    #[test]
    fn sector_restrict_dimensions_and_errors() {
        let r = QubitRegister::new(2).unwrap();
        let q = charge(r);
        assert_eq!(sector_restrict(&q, 1).unwrap().dim(), 2);
        let x = crate::operators::pauli(1, crate::operators::Axis::X, r).unwrap();
        assert!(matches!(sector_restrict(&x, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn sff_is_one_at_zero_time() {
        let s = Spectrum::from_levels(vec![-1.3, 0.2, 0.7, 2.9]);
        let curve = sff(&[s], 0.0, &[0.0, 1.0], SffAveraging::RatioOfAverages).unwrap();
        assert_eq!(curve.values[0], 1.0);
        assert!(sff(&[], 0.0, &[1.0], SffAveraging::RatioOfAverages).is_err());
    }

    #[test]
    fn grid_construction() {
        let g = log_grid(0.01, 20);
        assert_eq!(g.len(), 41);
        assert_eq!(g[0], 1.0);
        assert!((g[40] - 0.01).abs() < 1e-15);
        assert!(validate_p_grid(&g).is_ok());
        assert!(validate_p_grid(&[0.5, 0.2]).is_err());
        assert!(validate_p_grid(&[1.0, 0.0]).is_err());
    }

    fn curve_of(points: &[(f64, f64)]) -> GapRatioCurve {
        GapRatioCurve {
            n_sites: 6,
            j_scale: 1.0,
            n_dis: 100,
            master_seed: 0,
            points: points
                .iter()
                .map(|&(p, r)| GapRatioPoint {
                    p,
                    r_mean: Some(r),
                    r_stderr: Some(0.001),
                    n_eff: 100,
                    excluded: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn p2_log_linear_interpolation() {
        // threshold 0.594; crossing halfway between 0.1 and 0.01 in ln p
        let est = locate_p2(curve_of(&[(1.0, 0.6), (0.1, 0.598), (0.01, 0.590)])).unwrap();
        assert!((est.p2 - 10f64.powf(-1.5)).abs() < 1e-12);
        assert!(est.interval.0 <= est.p2 && est.p2 <= est.interval.1);
    }

    #[test]
    fn p2_not_found() {
        match locate_p2(curve_of(&[(1.0, 0.6), (0.5, 0.6)])) {
            Err(Error::NoCrossing(curve)) => assert_eq!(curve.points.len(), 2),
            other => panic!("expected NoCrossing, got {other:?}"),
        }
    }
}
