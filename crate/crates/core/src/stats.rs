//! Streaming sample statistics.

use serde::{Deserialize, Serialize};

/// Welford accumulator for mean and unbiased variance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance; `None` below two samples.
    pub fn variance(&self) -> Option<f64> {
        (self.count > 1).then(|| self.m2 / (self.count - 1) as f64)
    }

    /// Standard error of the mean, `s / √n`; `None` below two samples.
    pub fn stderr(&self) -> Option<f64> {
        self.variance().map(|v| (v / self.count as f64).sqrt())
    }
}

impl FromIterator<f64> for Accumulator {
    fn from_iter<T: IntoIterator<Item = f64>>(iter: T) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_sample_has_no_error_bar() {
        let acc: Accumulator = [3.0].into_iter().collect();
        assert_eq!(acc.mean(), 3.0);
        assert_eq!(acc.stderr(), None);
    }

    proptest! {
        #[test]
        fn matches_two_pass(xs in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let acc: Accumulator = xs.iter().copied().collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let scale = xs.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            prop_assert!((acc.mean() - mean).abs() <= 1e-12 * scale);
            let v = acc.variance().unwrap();
            prop_assert!((v - var).abs() <= 1e-12 * var.max(1e-300) + 1e-18);
        }
    }
}
