//! Controlled stochastic functional (delay) differential equations.
//!
//! The crate simulates `dS = μ(S_t, S(t), u) dt + σ(S_t, S(t), u) dW` with a
//! sampled history window, estimates exit-time cost functionals by Monte
//! Carlo, evaluates the weak infinitesimal generator (shift term plus Itô
//! terms) and HJB residuals, and ships the delayed-wealth portfolio model with
//! its closed-form optimal fraction.

// `!(a < b)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod estimate;
pub mod functional;
pub mod generator;
pub mod grid;
pub mod model;
pub mod noise;
pub mod optimizer;
pub mod portfolio;
pub mod segment;
pub mod simulator;

pub use config::ExperimentConfig;
pub use error::{Result, SfdeError};
pub use estimate::MonteCarloEstimate;
pub use grid::SimulationGrid;
pub use model::{Coefficients, ConstantLaw, ControlBox, ControlLaw, FnCoefficients, FnLaw};
pub use noise::NoiseStream;
pub use portfolio::{PortfolioModel, PortfolioParams};
pub use segment::{ControlledState, Segment, SegmentPath, Trajectory};
pub use simulator::{BatchConfig, PathResult, StoppingRule};
