//! The weak infinitesimal generator
//!
//! ```text
//! A^u f = Γf + f_x · μ + ½ Σ_{j=1..d} (σ e_j)ᵀ f_xx (σ e_j)
//! ```
//!
//! evaluated analytically and by Monte Carlo, and the Dynkin and
//! Dirichlet–Poisson checks built on it.

use serde::Serialize;

use crate::error::{Result, SfdeError};
use crate::estimate::MonteCarloEstimate;
use crate::functional::SmoothFunctional;
use crate::grid::SimulationGrid;
use crate::model::{Coefficients, ControlLaw};
use crate::noise::brownian_increments;
use crate::segment::{ControlledState, Segment};
use crate::simulator::{map_paths, simulate_path_with, BatchConfig, StoppingRule};

/// Shift step count for `h`, required to satisfy `0 < h ≤ r`.
fn shift_steps(grid: &SimulationGrid, h: f64) -> Result<usize> {
    let m = grid.step_of(h)?;
    if m == 0 || m > grid.n_history() {
        return Err(SfdeError::InvalidParameter(format!(
            "shift step h = {h} must satisfy 0 < h <= r = {}",
            grid.delay()
        )));
    }
    Ok(m)
}

/// Default shift step: `4·dt`, capped at the delay.
pub fn default_shift_step(grid: &SimulationGrid) -> f64 {
    grid.time_of(grid.n_history().min(4))
}

/// `[f(φ̂ˣ_h, x) - f(φ, x)] / h` with `h = m·dt`, on a segment view.
fn gamma_fd_view(f: &dyn SmoothFunctional, seg: &Segment<'_>, x: &[f64], m: usize) -> f64 {
    let n = seg.n_history();
    let dim = seg.dim();
    let mut shifted = Vec::with_capacity(seg.values().len());
    for i in 0..=n {
        if i + m >= n {
            shifted.extend_from_slice(x);
        } else {
            shifted.extend_from_slice(seg.point(i + m));
        }
    }
    let shifted_seg = Segment::new(&shifted, dim, seg.dt());
    (f.value(&shifted_seg, x) - f.value(seg, x)) / (m as f64 * seg.dt())
}

fn gamma_view(f: &dyn SmoothFunctional, seg: &Segment<'_>, x: &[f64], m: usize) -> f64 {
    match f.gamma_analytic(seg, x) {
        Some(g) => g,
        None => gamma_fd_view(f, seg, x, m),
    }
}

/// Shift term `Γf`: the analytic form when the functional supplies one,
/// otherwise the forward difference of the shifted segment at step `h`.
pub fn gamma_apply(f: &dyn SmoothFunctional, state: &ControlledState, h: f64) -> Result<f64> {
    let m = shift_steps(&state.grid(), h)?;
    let (seg, x) = state.view();
    Ok(gamma_view(f, &seg, x, m))
}

/// Forward-difference `Γf` regardless of any analytic form.
pub fn gamma_finite_difference(
    f: &dyn SmoothFunctional,
    state: &ControlledState,
    h: f64,
) -> Result<f64> {
    let m = shift_steps(&state.grid(), h)?;
    let (seg, x) = state.view();
    Ok(gamma_fd_view(f, &seg, x, m))
}

/// Scratch buffers for repeated generator evaluations.
pub(crate) struct GeneratorWorkspace {
    mu: Vec<f64>,
    sig: Vec<f64>,
    grad: Vec<f64>,
    hess: Vec<f64>,
    n: usize,
    d: usize,
}

impl GeneratorWorkspace {
    pub(crate) fn new(n: usize, d: usize) -> Self {
        Self {
            mu: vec![0.0; n],
            sig: vec![0.0; n * d],
            grad: vec![0.0; n],
            hess: vec![0.0; n * n],
            n,
            d,
        }
    }

    /// `A^u f` at `(seg, x)` with shift step count `m`.
    pub(crate) fn apply(
        &mut self,
        f: &dyn SmoothFunctional,
        coeffs: &dyn Coefficients,
        u: &[f64],
        seg: &Segment<'_>,
        x: &[f64],
        m: usize,
    ) -> f64 {
        let (n, d) = (self.n, self.d);
        coeffs.drift(seg, x, u, &mut self.mu);
        coeffs.diffusion(seg, x, u, &mut self.sig);
        f.grad_x(seg, x, &mut self.grad);
        f.hess_x(seg, x, &mut self.hess);
        let first: f64 = self.grad.iter().zip(&self.mu).map(|(g, m)| g * m).sum();
        let mut second = 0.0;
        for j in 0..d {
            for a in 0..n {
                let sa = self.sig[a * d + j];
                if sa == 0.0 {
                    continue;
                }
                for b in 0..n {
                    second += sa * self.hess[a * n + b] * self.sig[b * d + j];
                }
            }
        }
        gamma_view(f, seg, x, m) + first + 0.5 * second
    }

    /// Martingale part of one Euler step: `f_x·σΔW + ½(ΔWᵀσᵀf_xxσΔW - tr(σᵀf_xxσ)dt)`,
    /// using the diffusion and derivatives from the last `apply`.
    fn martingale_increment(&self, dw: &[f64], dt: f64) -> f64 {
        let (n, d) = (self.n, self.d);
        let sdw: Vec<f64> = (0..n)
            .map(|a| (0..d).map(|j| self.sig[a * d + j] * dw[j]).sum())
            .collect();
        let first: f64 = self.grad.iter().zip(&sdw).map(|(g, s)| g * s).sum();
        let mut quad = 0.0;
        for a in 0..n {
            for b in 0..n {
                quad += sdw[a] * self.hess[a * n + b] * sdw[b];
            }
        }
        let mut trace = 0.0;
        for j in 0..d {
            for a in 0..n {
                for b in 0..n {
                    trace += self.sig[a * d + j] * self.hess[a * n + b] * self.sig[b * d + j];
                }
            }
        }
        first + 0.5 * (quad - trace * dt)
    }
}

fn check_dims(coeffs: &dyn Coefficients, state: &ControlledState, control: &[f64]) -> Result<()> {
    if state.dim() != coeffs.state_dim() {
        return Err(SfdeError::Shape(format!(
            "state dimension {} vs coefficient dimension {}",
            state.dim(),
            coeffs.state_dim()
        )));
    }
    if control.len() != coeffs.control_dim() {
        return Err(SfdeError::Shape(format!(
            "control dimension {} vs coefficient control dimension {}",
            control.len(),
            coeffs.control_dim()
        )));
    }
    Ok(())
}

/// Analytic `A^v f` at a state for a fixed control `v`.
pub fn generator_apply(
    f: &dyn SmoothFunctional,
    coeffs: &dyn Coefficients,
    control: &[f64],
    state: &ControlledState,
    h: f64,
) -> Result<f64> {
    check_dims(coeffs, state, control)?;
    let m = shift_steps(&state.grid(), h)?;
    let (seg, x) = state.view();
    let mut ws = GeneratorWorkspace::new(coeffs.state_dim(), coeffs.noise_dim());
    Ok(ws.apply(f, coeffs, control, &seg, x, m))
}

/// Control chosen by `law` at `state`.
pub fn law_control(law: &dyn ControlLaw, state: &ControlledState) -> Vec<f64> {
    let (seg, x) = state.view();
    let mut u = vec![0.0; law.control_dim()];
    law.evaluate(&seg, x, &mut u);
    u
}

/// Analytic value against a Monte Carlo estimate of the same generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorReport {
    pub analytic: f64,
    pub monte_carlo: MonteCarloEstimate,
    pub h_used: f64,
    pub discrepancy: f64,
}

impl GeneratorReport {
    pub fn new(analytic: f64, monte_carlo: MonteCarloEstimate, h_used: f64) -> Self {
        Self {
            analytic,
            monte_carlo,
            h_used,
            discrepancy: (analytic - monte_carlo.mean).abs(),
        }
    }
}

struct WeakSample {
    plain: f64,
    corrected: f64,
}

#[allow(clippy::too_many_arguments)]
fn weak_generator_samples(
    f: &dyn SmoothFunctional,
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    state: &ControlledState,
    grid: &SimulationGrid,
    h: f64,
    batch: &BatchConfig,
    corrected: bool,
) -> Result<Vec<WeakSample>> {
    if batch.n_paths < 1000 {
        return Err(SfdeError::InvalidParameter(
            "weak generator estimates need at least 1000 paths".into(),
        ));
    }
    let steps = grid.step_of(h)?;
    if steps == 0 {
        return Err(SfdeError::InvalidParameter("h must be positive".into()));
    }
    let sub = grid.with_horizon(h)?;
    let m_gamma = grid.n_history().min(4);
    let (seg0, x0) = state.view();
    let f0 = f.value(&seg0, x0);
    let (n, d) = (coeffs.state_dim(), coeffs.noise_dim());
    let dt = grid.dt();
    map_paths(batch.n_paths, batch.workers, |i| {
        let stream = batch.stream(i, d);
        let mut ws = GeneratorWorkspace::new(n, d);
        let mut martingale_parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
        let res = simulate_path_with(
            coeffs,
            law,
            state,
            &sub,
            &stream,
            0.0,
            StoppingRule::FixedHorizon,
            &mut |v| {
                if corrected {
                    ws.apply(f, coeffs, v.control, v.segment, v.current, m_gamma);
                    martingale_parts.push((ws.sig.clone(), ws.grad.clone(), ws.hess.clone()));
                }
            },
        )?;
        let (seg, x) = res.exit_state.view();
        let delta = f.value(&seg, x) - f0;
        let mut correction = 0.0;
        if corrected {
            let dw = brownian_increments(&stream, steps, dt);
            for (k, (sig, grad, hess)) in martingale_parts.into_iter().enumerate() {
                ws.sig = sig;
                ws.grad = grad;
                ws.hess = hess;
                correction += ws.martingale_increment(&dw[k * d..(k + 1) * d], dt);
            }
        }
        Ok(WeakSample {
            plain: delta / h,
            corrected: (delta - correction) / h,
        })
    })
}

/// `(E f(S_h, S(h)) - f(φ, x)) / h` by Monte Carlo.
#[allow(clippy::too_many_arguments)]
pub fn weak_generator_estimate(
    f: &dyn SmoothFunctional,
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    state: &ControlledState,
    grid: &SimulationGrid,
    h: f64,
    batch: &BatchConfig,
) -> Result<MonteCarloEstimate> {
    let samples = weak_generator_samples(f, coeffs, law, state, grid, h, batch, false)?;
    let plain: Vec<f64> = samples.iter().map(|s| s.plain).collect();
    Ok(MonteCarloEstimate::from_samples(
        &plain,
        batch.master_seed,
        0.0,
    ))
}

/// Same expectation as [`weak_generator_estimate`], with the zero-mean
/// first- and second-order Itô martingale increments of each Euler step
/// subtracted path by path. The remaining noise is small enough to resolve
/// the `O(h)` bias.
#[allow(clippy::too_many_arguments)]
pub fn weak_generator_estimate_corrected(
    f: &dyn SmoothFunctional,
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    state: &ControlledState,
    grid: &SimulationGrid,
    h: f64,
    batch: &BatchConfig,
) -> Result<MonteCarloEstimate> {
    let samples = weak_generator_samples(f, coeffs, law, state, grid, h, batch, true)?;
    let corrected: Vec<f64> = samples.iter().map(|s| s.corrected).collect();
    Ok(MonteCarloEstimate::from_samples(
        &corrected,
        batch.master_seed,
        0.0,
    ))
}

/// Generator at `state` under `law`'s control, analytic vs plain Monte Carlo.
#[allow(clippy::too_many_arguments)]
pub fn generator_report(
    f: &dyn SmoothFunctional,
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    state: &ControlledState,
    grid: &SimulationGrid,
    h: f64,
    batch: &BatchConfig,
) -> Result<GeneratorReport> {
    let u = law_control(law, state);
    let analytic = generator_apply(f, coeffs, &u, state, default_shift_step(grid))?;
    let mc = weak_generator_estimate(f, coeffs, law, state, grid, h, batch)?;
    Ok(GeneratorReport::new(analytic, mc, h))
}

/// Both sides of the Dynkin formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynkinResult {
    /// `E f(S_τ, S(τ))`
    pub lhs: MonteCarloEstimate,
    /// `f(φ, x) + E ∫₀^τ A^u f ds`
    pub rhs: MonteCarloEstimate,
    pub gap: f64,
}

impl DynkinResult {
    /// Gap within `k` combined standard errors plus `slack`.
    pub fn balanced(&self, k: f64, slack: f64) -> bool {
        self.gap <= k * (self.lhs.std_error + self.rhs.std_error) + slack
    }
}

/// Dynkin balance with `τ` given by `rule` (bounded by the horizon). The
/// integral uses left-endpoint values of `A^{u(t)} f` along each path.
pub fn dynkin_check(
    f: &dyn SmoothFunctional,
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    init: &ControlledState,
    grid: &SimulationGrid,
    rule: StoppingRule,
    batch: &BatchConfig,
) -> Result<DynkinResult> {
    let (seg0, x0) = init.view();
    let f0 = f.value(&seg0, x0);
    let m_gamma = grid.n_history().min(4);
    let (n, d) = (coeffs.state_dim(), coeffs.noise_dim());
    let dt = grid.dt();
    let rows = map_paths(batch.n_paths, batch.workers, |i| {
        let stream = batch.stream(i, d);
        let mut ws = GeneratorWorkspace::new(n, d);
        let mut integral = 0.0;
        let res = simulate_path_with(coeffs, law, init, grid, &stream, 0.0, rule, &mut |v| {
            integral += ws.apply(f, coeffs, v.control, v.segment, v.current, m_gamma) * dt;
        })?;
        let (seg, x) = res.exit_state.view();
        Ok((f.value(&seg, x), f0 + integral, res.censored))
    })?;
    let censored = rows.iter().filter(|r| r.2).count() as f64 / rows.len().max(1) as f64;
    let lhs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let rhs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let lhs = MonteCarloEstimate::from_samples(&lhs, batch.master_seed, censored);
    let rhs = MonteCarloEstimate::from_samples(&rhs, batch.master_seed, censored);
    Ok(DynkinResult {
        lhs,
        rhs,
        gap: (lhs.mean - rhs.mean).abs(),
    })
}

/// Censored fraction above which exit-time estimates are flagged.
pub const CENSORED_WARNING_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirichletReport {
    pub estimate: MonteCarloEstimate,
    pub pilot_censored_fraction: f64,
    /// Pilot mean of `∫|g| dt`, the integrability proxy.
    pub pilot_abs_source: f64,
    pub censored_warning: bool,
}

/// `w(φ, x) = E[ψ(S_τ, S(τ))] + E[∫₀^τ g dt]` with `τ` the exit time from `G`.
///
/// A pilot batch (1/20 of the paths, at least 100, on a derived seed) checks
/// the censored fraction and the integrability of `g` first.
#[allow(clippy::too_many_arguments)]
pub fn dirichlet_poisson_estimate(
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    init: &ControlledState,
    grid: &SimulationGrid,
    g: &(dyn Fn(&Segment<'_>, &[f64]) -> f64 + Sync),
    psi: &(dyn Fn(&Segment<'_>, &[f64]) -> f64 + Sync),
    batch: &BatchConfig,
) -> Result<DirichletReport> {
    let run = |b: &BatchConfig| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let d = coeffs.noise_dim();
        let dt = grid.dt();
        let rows = map_paths(b.n_paths, b.workers, |i| {
            let stream = b.stream(i, d);
            let mut source = 0.0;
            let mut abs_source = 0.0;
            let res = simulate_path_with(
                coeffs,
                law,
                init,
                grid,
                &stream,
                0.0,
                StoppingRule::RegionExit,
                &mut |v| {
                    let gv = g(v.segment, v.current);
                    source += gv * dt;
                    abs_source += gv.abs() * dt;
                },
            )?;
            let (seg, x) = res.exit_state.view();
            Ok((psi(&seg, x) + source, abs_source, res.censored))
        })?;
        let censored = rows.iter().filter(|r| r.2).count() as f64 / rows.len().max(1) as f64;
        Ok((
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            censored,
        ))
    };
    let pilot = BatchConfig {
        n_paths: (batch.n_paths / 20).max(100),
        master_seed: batch.master_seed ^ 0x5DEE_CE66_D1CE_5EED,
        workers: batch.workers,
    };
    let (_, pilot_abs, pilot_censored) = run(&pilot)?;
    let pilot_abs_source = pilot_abs.iter().sum::<f64>() / pilot_abs.len() as f64;
    let (values, _, censored) = run(batch)?;
    let estimate = MonteCarloEstimate::from_samples(&values, batch.master_seed, censored);
    Ok(DirichletReport {
        estimate,
        pilot_censored_fraction: pilot_censored,
        pilot_abs_source,
        censored_warning: pilot_censored > CENSORED_WARNING_THRESHOLD
            || censored > CENSORED_WARNING_THRESHOLD
            || !pilot_abs_source.is_finite(),
    })
}

/// `A^u w + g` at `state` for a candidate solution `w`; zero inside `G`
/// when `w` solves the Dirichlet–Poisson problem.
pub fn dirichlet_candidate_residual(
    w: &dyn SmoothFunctional,
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    state: &ControlledState,
    g: &dyn Fn(&Segment<'_>, &[f64]) -> f64,
    h: f64,
) -> Result<f64> {
    let u = law_control(law, state);
    let gen = generator_apply(w, coeffs, &u, state, h)?;
    let (seg, x) = state.view();
    Ok(gen + g(&seg, x))
}

/// Outcome of the sub-solution inequality check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubsolutionReport {
    pub f_init: f64,
    /// `E[∫₀^τ M dt + f(S_τ, S(τ))]`
    pub bound: MonteCarloEstimate,
    /// Smallest `A^u f + M` seen along the simulated paths.
    pub min_residual: f64,
}

impl SubsolutionReport {
    /// The inequality `f(init) ≤ bound` within `k` standard errors. Only
    /// meaningful when `min_residual ≥ 0`.
    pub fn holds(&self, k: f64) -> bool {
        self.f_init <= self.bound.mean + k * self.bound.std_error
    }
}

/// If `A^u f + M ≥ 0` along the paths then `f(init) ≤ E[∫M + f(exit)]`.
#[allow(clippy::too_many_arguments)]
pub fn subsolution_check(
    f: &dyn SmoothFunctional,
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    init: &ControlledState,
    grid: &SimulationGrid,
    source: &(dyn Fn(&Segment<'_>, &[f64]) -> f64 + Sync),
    batch: &BatchConfig,
) -> Result<SubsolutionReport> {
    let (seg0, x0) = init.view();
    let f_init = f.value(&seg0, x0);
    let m_gamma = grid.n_history().min(4);
    let (n, d) = (coeffs.state_dim(), coeffs.noise_dim());
    let dt = grid.dt();
    let rows = map_paths(batch.n_paths, batch.workers, |i| {
        let stream = batch.stream(i, d);
        let mut ws = GeneratorWorkspace::new(n, d);
        let mut integral = 0.0;
        let mut min_res = f64::INFINITY;
        let res = simulate_path_with(
            coeffs,
            law,
            init,
            grid,
            &stream,
            0.0,
            StoppingRule::RegionExit,
            &mut |v| {
                let m = source(v.segment, v.current);
                let a = ws.apply(f, coeffs, v.control, v.segment, v.current, m_gamma);
                min_res = min_res.min(a + m);
                integral += m * dt;
            },
        )?;
        let (seg, x) = res.exit_state.view();
        Ok((integral + f.value(&seg, x), min_res, res.censored))
    })?;
    let censored = rows.iter().filter(|r| r.2).count() as f64 / rows.len().max(1) as f64;
    let values: Vec<f64> = rows.iter().map(|r| r.0).collect();
    Ok(SubsolutionReport {
        f_init,
        bound: MonteCarloEstimate::from_samples(&values, batch.master_seed, censored),
        min_residual: rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
    })
}
