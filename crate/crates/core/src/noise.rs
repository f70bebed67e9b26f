//! Counter-addressed Gaussian increments.
//!
//! Each path owns a ChaCha stream selected by `(master_seed, path_index)`.
//! Normal number `k` (step `k / d`, component `k % d`) is produced by
//! Box–Muller from the two 64-bit words at pair position `k / 2`, so any
//! increment can be regenerated by seeking, independent of worker count or
//! evaluation order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    pub master_seed: u64,
    pub path_index: u64,
    pub dim: usize,
}

impl NoiseStream {
    pub fn new(master_seed: u64, path_index: u64, dim: usize) -> Self {
        Self {
            master_seed,
            path_index,
            dim,
        }
    }

    /// Cursor positioned at the first increment of `start_step`.
    pub fn cursor(&self, start_step: usize, dt: f64) -> NoiseCursor {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.path_index);
        let k0 = (start_step * self.dim) as u128;
        // two u64 per pair = four 32-bit words
        rng.set_word_pos((k0 / 2) * 4);
        let mut cursor = NoiseCursor {
            rng,
            pending: None,
            dim: self.dim,
            scale: dt.sqrt(),
        };
        if k0 % 2 == 1 {
            let (_, second) = cursor.pair();
            cursor.pending = Some(second);
        }
        cursor
    }
}

pub struct NoiseCursor {
    rng: ChaCha8Rng,
    pending: Option<f64>,
    dim: usize,
    scale: f64,
}

impl NoiseCursor {
    fn pair(&mut self) -> (f64, f64) {
        let u1 = (self.rng.next_u64() >> 11) as f64 * INV_2_53;
        let u2 = (self.rng.next_u64() >> 11) as f64 * INV_2_53;
        let radius = (-2.0 * (1.0 - u1).ln()).sqrt();
        let (s, c) = (TWO_PI * u2).sin_cos();
        (radius * c, radius * s)
    }

    pub fn next_standard_normal(&mut self) -> f64 {
        if let Some(z) = self.pending.take() {
            return z;
        }
        let (a, b) = self.pair();
        self.pending = Some(b);
        a
    }

    /// Writes the next step's `d` increments, each `N(0, dt)`.
    pub fn fill_step(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        for v in out.iter_mut() {
            *v = self.scale * self.next_standard_normal();
        }
    }
}

/// `n_steps` consecutive increments starting at step 0, flattened
/// step-major (`n_steps × d`).
pub fn brownian_increments(stream: &NoiseStream, n_steps: usize, dt: f64) -> Vec<f64> {
    let mut cursor = stream.cursor(0, dt);
    let mut out = vec![0.0; n_steps * stream.dim];
    for chunk in out.chunks_mut(stream.dim.max(1)) {
        cursor.fill_step(chunk);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_request() {
        assert!(brownian_increments(&NoiseStream::new(1, 0, 1), 0, 0.01).is_empty());
    }

    #[test]
    fn deterministic_per_seed_and_path() {
        let s = NoiseStream::new(42, 3, 2);
        let a = brownian_increments(&s, 100, 0.01);
        let b = brownian_increments(&s, 100, 0.01);
        assert_eq!(a, b);
        let other = brownian_increments(&NoiseStream::new(42, 4, 2), 100, 0.01);
        assert_ne!(a, other);
    }

    #[test]
    fn seeking_reproduces_the_tail() {
        for dim in [1, 2, 3] {
            let s = NoiseStream::new(9, 11, dim);
            let all = brownian_increments(&s, 50, 1e-3);
            for start in [0, 1, 7, 25, 49] {
                let mut c = s.cursor(start, 1e-3);
                let mut buf = vec![0.0; dim];
                for step in start..50 {
                    c.fill_step(&mut buf);
                    assert_eq!(&buf[..], &all[step * dim..(step + 1) * dim]);
                }
            }
        }
    }

    #[test]
    fn moments_of_increments() {
        let dt = 1e-2;
        let n = 1_000_000;
        let z = brownian_increments(&NoiseStream::new(2024, 0, 1), n, dt);
        let mean = z.iter().sum::<f64>() / n as f64;
        // four CLT standard deviations of the sample mean
        assert!(mean.abs() <= 4.0 * (dt / n as f64).sqrt(), "mean {mean}");
        let var = z.iter().map(|v| v * v).sum::<f64>() / n as f64;
        // Var(Z²) = 2 dt² for Gaussian increments
        assert!(
            (var - dt).abs() <= 4.0 * (2.0 * dt * dt / n as f64).sqrt(),
            "var {var}"
        );
    }
}
