//! Uniform time grid shared by the history window `[-r, 0]` and the forward
//! horizon `[0, a]`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfdeError};

/// Relative slack allowed when checking that a time is a multiple of `dt`.
const ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationGrid {
    delay: f64,
    horizon: f64,
    dt: f64,
    n_history: usize,
    n_forward: usize,
}

impl SimulationGrid {
    /// Builds a grid with delay `r`, horizon `a` and step `dt`. Both `r` and
    /// `a` must be integer multiples of `dt`.
    pub fn new(delay: f64, horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SfdeError::InvalidGrid(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if !(delay.is_finite() && delay > 0.0) {
            return Err(SfdeError::InvalidGrid(format!(
                "delay must be positive, got {delay}"
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SfdeError::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let n_history = steps_in(delay, dt)?;
        let n_forward = steps_in(horizon, dt)?;
        if n_history == 0 {
            return Err(SfdeError::InvalidGrid("delay shorter than one step".into()));
        }
        Ok(Self {
            delay,
            horizon,
            dt,
            n_history,
            n_forward,
        })
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps spanning the delay window; segments hold one more point.
    pub fn n_history(&self) -> usize {
        self.n_history
    }

    pub fn n_forward(&self) -> usize {
        self.n_forward
    }

    pub fn time_of(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Converts a non-negative grid time to its step index.
    pub fn step_of(&self, time: f64) -> Result<usize> {
        if !time.is_finite() || time < -ALIGN_TOL * self.dt {
            return Err(SfdeError::InvalidParameter(format!(
                "time must be non-negative, got {time}"
            )));
        }
        steps_in(time.max(0.0), self.dt)
    }

    /// Same delay and step, different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.delay, horizon, self.dt)
    }
}

fn steps_in(time: f64, dt: f64) -> Result<usize> {
    let ratio = time / dt;
    let n = ratio.round();
    if (ratio - n).abs() > ALIGN_TOL * n.max(1.0) {
        return Err(SfdeError::Alignment { time, dt });
    }
    Ok(n as usize)
}
