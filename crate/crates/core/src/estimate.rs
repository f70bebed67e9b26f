use serde::{Deserialize, Serialize};

/// Monte Carlo estimate of an expectation together with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n_paths)`.
    pub std_error: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Fraction of paths that reached the horizon without leaving `G`.
    pub censored_fraction: f64,
}

impl MonteCarloEstimate {
    /// Summarizes samples in index order, so identical inputs give
    /// bit-identical results.
    pub fn from_samples(samples: &[f64], master_seed: u64, censored_fraction: f64) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: 0.0,
                std_error: 0.0,
                n_paths: 0,
                master_seed,
                censored_fraction,
            };
        }
        // shifted by the first sample so constant inputs are reproduced exactly
        let pivot = samples[0];
        let shift = samples.iter().map(|s| s - pivot).sum::<f64>() / n as f64;
        let mean = pivot + shift;
        let std_error = if n < 2 {
            0.0
        } else {
            let ss: f64 = samples
                .iter()
                .map(|s| (s - pivot - shift) * (s - pivot - shift))
                .sum();
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        };
        Self {
            mean,
            std_error,
            n_paths: n,
            master_seed,
            censored_fraction,
        }
    }

    /// `(mean - c) / s` with the error scaled accordingly.
    pub fn affine(&self, shift: f64, scale: f64) -> Self {
        Self {
            mean: (self.mean - shift) / scale,
            std_error: self.std_error / scale.abs(),
            ..*self
        }
    }

    /// Whether `value` lies within `k` standard errors plus `slack` of the mean.
    pub fn covers(&self, value: f64, k: f64, slack: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error + slack
    }

    pub const CSV_HEADER: [&'static str; 5] =
        ["mean", "std_error", "n_paths", "seed", "censored_fraction"];

    pub fn csv_record(&self) -> [String; 5] {
        [
            self.mean.to_string(),
            self.std_error.to_string(),
            self.n_paths.to_string(),
            self.master_seed.to_string(),
            self.censored_fraction.to_string(),
        ]
    }
}

/// Estimate of `E[a - b]` from paired samples (common random numbers).
pub fn paired_difference(a: &[f64], b: &[f64], master_seed: u64) -> MonteCarloEstimate {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    MonteCarloEstimate::from_samples(&diffs, master_seed, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_have_zero_error() {
        let e = MonteCarloEstimate::from_samples(&[1.0; 10], 7, 0.0);
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_error, 0.0);
        assert_eq!(e.n_paths, 10);
    }

    #[test]
    fn std_error_matches_hand_computation() {
        // mean 2.5, sample variance 5/3
        let e = MonteCarloEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0], 0, 0.0);
        assert_eq!(e.mean, 2.5);
        let expected = (5.0f64 / 3.0).sqrt() / 2.0;
        assert!((e.std_error - expected).abs() < 1e-15);
    }

    #[test]
    fn paired_difference_cancels_common_noise() {
        let a = [1.0, 2.0, 3.0];
        let b = [0.5, 1.5, 2.5];
        let d = paired_difference(&a, &b, 0);
        assert_eq!(d.mean, 0.5);
        assert_eq!(d.std_error, 0.0);
    }
}
