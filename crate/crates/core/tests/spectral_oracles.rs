use faer::Mat;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use sparse_syk::operators::{DenseOperator, QubitRegister};
use sparse_syk::sectors::ChargeSector;
use sparse_syk::spectra::{diagonalize, gap_ratio_of, sector_restrict, sff, SffAveraging, Spectrum};
use sparse_syk::stats::Accumulator;
use sparse_syk::syk::{build_hamiltonian, CouplingTensor, DisorderSeed};
use sparse_syk::C64;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gue(dim: usize, rng: &mut ChaCha8Rng) -> Mat<C64> {
    let a = Mat::from_fn(dim, dim, |_, _| C64::new(gaussian(rng), gaussian(rng)));
    Mat::from_fn(dim, dim, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

fn poisson_levels(count: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut e = 0.0;
    (0..count)
        .map(|_| {
            e += rng.sample::<f64, _>(Exp1);
            e
        })
        .collect()
}

#[test]
fn random_hermitian_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = gue(64, &mut rng);
    let spectrum = diagonalize(&h, true).unwrap();
    let v = spectrum.eigenvectors().unwrap();
    let lambda = spectrum.eigenvalues();
    assert!(lambda.windows(2).all(|w| w[0] <= w[1]));
    let mut worst_rec = 0.0f64;
    let mut worst_unit = 0.0f64;
    for i in 0..64 {
        for j in 0..64 {
            let rec: C64 = (0..64).map(|k| v[(i, k)] * lambda[k] * v[(j, k)].conj()).sum();
            worst_rec = worst_rec.max((rec - h[(i, j)]).norm());
            let overlap: C64 = (0..64).map(|k| v[(k, i)].conj() * v[(k, j)]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst_unit = worst_unit.max((overlap - target).norm());
        }
    }
    assert!(worst_rec < 1e-10, "reconstruction {worst_rec:e}");
    assert!(worst_unit < 1e-10, "unitarity {worst_unit:e}");
}

#[test]
fn gue_gap_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let acc: Accumulator = (0..60)
        .map(|_| gap_ratio_of(&diagonalize(&gue(256, &mut rng), false).unwrap().into_parts().0).unwrap())
        .collect();
    assert!((acc.mean() - 0.600).abs() < 0.005 + 3.0 * acc.stderr().unwrap(), "r = {}", acc.mean());
}

#[test]
fn poisson_gap_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let acc: Accumulator = (0..200)
        .map(|_| gap_ratio_of(&poisson_levels(512, &mut rng)).unwrap())
        .collect();
    let expected = 2.0 * std::f64::consts::LN_2 - 1.0;
    assert!((acc.mean() - expected).abs() < 0.005, "r = {}", acc.mean());
}

#[test]
fn sector_blocks_rebuild_the_full_spectrum() {
    let n = 6;
    let reg = QubitRegister::new(n).unwrap();
    let t = CouplingTensor::realize(n, 1.0, 0.6, DisorderSeed::new(4, 4)).unwrap();
    let h = build_hamiltonian(&t, reg).unwrap();
    let full = diagonalize(&h, false).unwrap();
    let mut blocks = Vec::new();
    for m in 0..=n {
        blocks.extend(diagonalize(&sector_restrict(&h, m).unwrap(), false).unwrap().into_parts().0);
    }
    let blocks = Spectrum::from_levels(blocks);
    for (a, b) in full.eigenvalues().iter().zip(blocks.eigenvalues()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(sector_restrict(&h, 3).unwrap().dim(), 20);
    assert_eq!(ChargeSector::half_filling(reg).dim(), 20);
}

#[test]
fn dense_operator_and_matrix_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = gue(16, &mut rng);
    let op = DenseOperator::from_matrix(QubitRegister::new(4).unwrap(), m.clone()).unwrap();
    assert_eq!(
        diagonalize(&op, false).unwrap().eigenvalues(),
        diagonalize(&m, false).unwrap().eigenvalues()
    );
}

#[test]
fn sff_long_time_average_is_inverse_dimension() {
    // diagonal approximation: for D non-degenerate levels the time average of
    // |Z(it)|² / Z(0)² is D / D²
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let levels: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
    let spectrum = Spectrum::from_levels(levels);
    let times: Vec<f64> = (0..20_000).map(|_| rng.random_range(1e3..1e6)).collect();
    let curve = sff(&[spectrum], 0.0, &times, SffAveraging::RatioOfAverages).unwrap();
    let average = curve.values.iter().sum::<f64>() / times.len() as f64;
    assert!((average * 16.0 - 1.0).abs() < 0.05, "average {average}");
}

#[test]
fn sff_averaging_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spectra: Vec<Spectrum> = (0..5)
        .map(|_| Spectrum::from_levels((0..10).map(|_| gaussian(&mut rng)).collect()))
        .collect();
    let times = [0.0, 0.5, 3.0];
    for beta in [0.0, 0.8] {
        for mode in [SffAveraging::RatioOfAverages, SffAveraging::AverageOfRatios] {
            let curve = sff(&spectra, beta, &times, mode).unwrap();
            assert!((curve.values[0] - 1.0).abs() < 1e-14);
            assert!(curve.values.iter().all(|&v| v > 0.0 && v <= 1.0 + 1e-12));
        }
    }
    // with β = 0, Z(0)² = D² is the same for every realization
    let a = sff(&spectra, 0.0, &times, SffAveraging::RatioOfAverages).unwrap();
    let b = sff(&spectra, 0.0, &times, SffAveraging::AverageOfRatios).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).abs() < 1e-14);
    }
    assert!(sff(&[], 0.0, &times, SffAveraging::RatioOfAverages).is_err());
    assert!(sff(&spectra, 0.0, &[], SffAveraging::RatioOfAverages).is_err());
}

proptest! {
    #[test]
    fn gap_ratio_affine_invariance(
        seed in any::<u64>(),
        scale in 1e-3f64..1e3,
        shift in -1e3f64..1e3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = poisson_levels(40, &mut rng);
        let mapped: Vec<f64> = levels.iter().map(|e| scale * e + shift).collect();
        let r0 = gap_ratio_of(&levels).unwrap();
        let r1 = gap_ratio_of(&mapped).unwrap();
        prop_assert!((r0 - r1).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&r0));
    }

    #[test]
    fn gap_ratio_ignores_input_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = poisson_levels(20, &mut rng);
        let mut reversed = levels.clone();
        reversed.reverse();
        prop_assert_eq!(gap_ratio_of(&levels).unwrap(), gap_ratio_of(&reversed).unwrap());
    }
}
