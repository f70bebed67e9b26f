//! Euler–Maruyama integration of the controlled SFDE
//! `dS = μ(S_t, S(t), u) dt + σ(S_t, S(t), u) dW`, exit detection, and
//! deterministic Monte Carlo batches.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfdeError};
use crate::estimate::MonteCarloEstimate;
use crate::grid::SimulationGrid;
use crate::model::{Coefficients, ControlLaw};
use crate::noise::NoiseStream;
use crate::segment::{segment_extract, ControlledState, Segment, SegmentPath, Trajectory};

/// Any component above this magnitude aborts the path.
pub const BLOW_UP_LIMIT: f64 = 1e12;

/// When a simulated path stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingRule {
    /// First grid time outside `G`, censored at the horizon.
    #[default]
    RegionExit,
    /// Always run to the horizon; `G` is ignored.
    FixedHorizon,
}

/// Monte Carlo batch settings. `workers = None` uses the global rayon pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub n_paths: usize,
    pub master_seed: u64,
    pub workers: Option<usize>,
}

impl BatchConfig {
    pub fn new(n_paths: usize, master_seed: u64) -> Self {
        Self {
            n_paths,
            master_seed,
            workers: None,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }

    pub fn stream(&self, path_index: usize, dim: usize) -> NoiseStream {
        NoiseStream::new(self.master_seed, path_index as u64, dim)
    }
}

/// One simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    /// Samples from `start_time - r` to the exit (or censoring) time.
    pub trajectory: Trajectory,
    pub start_step: usize,
    pub exit_step: usize,
    pub exit_time: f64,
    /// Still inside `G` at the horizon (region-exit runs only).
    pub censored: bool,
    pub exit_state: ControlledState,
    /// `Σ L(S_t, S(t), u(t)) dt` over the steps taken inside `G`.
    pub running_cost_integral: f64,
    /// Controls applied at each step, step-major.
    pub controls: Vec<f64>,
    pub control_dim: usize,
}

impl PathResult {
    /// State value at grid step `step`.
    pub fn state_at(&self, step: usize) -> Option<&[f64]> {
        self.trajectory.at_step(step as i64)
    }

    pub fn control_at(&self, step: usize) -> Option<&[f64]> {
        let i = step.checked_sub(self.start_step)?;
        let m = self.control_dim;
        self.controls.get(i * m..(i + 1) * m)
    }
}

/// Exit time and state; censored paths report the horizon.
#[derive(Debug, Clone, Copy)]
pub struct ExitInfo<'a> {
    pub time: f64,
    pub state: &'a ControlledState,
    pub censored: bool,
}

pub fn exit_time(result: &PathResult) -> ExitInfo<'_> {
    ExitInfo {
        time: result.exit_time,
        state: &result.exit_state,
        censored: result.censored,
    }
}

/// Read-only view of the state before an Euler step, handed to observers.
pub struct StepView<'a> {
    pub step: usize,
    pub time: f64,
    pub segment: &'a Segment<'a>,
    pub current: &'a [f64],
    pub control: &'a [f64],
}

pub fn simulate_path(
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    init: &ControlledState,
    grid: &SimulationGrid,
    stream: &NoiseStream,
    start_time: f64,
) -> Result<PathResult> {
    simulate_path_with(
        coeffs,
        law,
        init,
        grid,
        stream,
        start_time,
        StoppingRule::RegionExit,
        &mut |_| {},
    )
}

fn check_shapes(
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    init: &ControlledState,
    grid: &SimulationGrid,
    stream: &NoiseStream,
) -> Result<()> {
    let g = init.grid();
    if g.n_history() != grid.n_history() || g.dt() != grid.dt() {
        return Err(SfdeError::Shape(
            "initial segment was sampled on a different grid".into(),
        ));
    }
    if init.dim() != coeffs.state_dim() {
        return Err(SfdeError::Shape(format!(
            "state has dimension {}, coefficients expect {}",
            init.dim(),
            coeffs.state_dim()
        )));
    }
    if law.control_dim() != coeffs.control_dim() {
        return Err(SfdeError::Shape(format!(
            "law produces {} controls, coefficients expect {}",
            law.control_dim(),
            coeffs.control_dim()
        )));
    }
    if stream.dim != coeffs.noise_dim() {
        return Err(SfdeError::Shape(format!(
            "noise stream has dimension {}, coefficients expect {}",
            stream.dim,
            coeffs.noise_dim()
        )));
    }
    Ok(())
}

fn squared_sum(points: &[f64]) -> f64 {
    points.iter().map(|v| v * v).sum()
}

/// Euler–Maruyama with the control evaluated at the left endpoint of each
/// step. The observer sees every state from which a step is taken.
#[allow(clippy::too_many_arguments)]
pub fn simulate_path_with(
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    init: &ControlledState,
    grid: &SimulationGrid,
    stream: &NoiseStream,
    start_time: f64,
    rule: StoppingRule,
    observer: &mut dyn FnMut(&StepView<'_>),
) -> Result<PathResult> {
    check_shapes(coeffs, law, init, grid, stream)?;
    let start_step = grid.step_of(start_time)?;
    if start_step > grid.n_forward() {
        return Err(SfdeError::InvalidParameter(format!(
            "start time {start_time} beyond horizon {}",
            grid.horizon()
        )));
    }
    let n = init.dim();
    let d = coeffs.noise_dim();
    let m = coeffs.control_dim();
    let nh = grid.n_history();
    let dt = grid.dt();

    // S(start) = x even if the stored segment ends elsewhere
    let mut values = Vec::with_capacity((nh + 1) * n);
    values.extend_from_slice(&init.segment().values()[..nh * n]);
    values.extend_from_slice(init.current());

    let mut sum_sq = squared_sum(&values[..nh * n]);
    let mut since_refresh = 0usize;
    let mut pos = nh;
    let mut cursor = stream.cursor(start_step, dt);

    let mut u = vec![0.0; m];
    let mut mu = vec![0.0; n];
    let mut sig = vec![0.0; n * d];
    let mut dw = vec![0.0; d];
    let mut next = vec![0.0; n];
    let mut controls = Vec::new();
    let mut running = 0.0;
    let mut exited_at = None;

    for step in start_step..grid.n_forward() {
        {
            let window = &values[(pos - nh) * n..(pos + 1) * n];
            let seg = Segment::with_sum_sq(window, n, dt, sum_sq);
            let x = &values[pos * n..(pos + 1) * n];
            if rule == StoppingRule::RegionExit && !coeffs.in_region(&seg, x) {
                exited_at = Some(step);
                break;
            }
            law.evaluate(&seg, x, &mut u);
            coeffs.drift(&seg, x, &u, &mut mu);
            coeffs.diffusion(&seg, x, &u, &mut sig);
            running += coeffs.running_cost(&seg, x, &u) * dt;
            observer(&StepView {
                step,
                time: grid.time_of(step),
                segment: &seg,
                current: x,
                control: &u,
            });
            cursor.fill_step(&mut dw);
            for i in 0..n {
                let noise: f64 = sig[i * d..(i + 1) * d]
                    .iter()
                    .zip(&dw)
                    .map(|(s, w)| s * w)
                    .sum();
                next[i] = x[i] + mu[i] * dt + noise;
            }
        }
        if next
            .iter()
            .any(|v| !v.is_finite() || v.abs() > BLOW_UP_LIMIT)
        {
            return Err(SfdeError::BlowUp {
                step: step + 1,
                path_index: None,
            });
        }
        values.extend_from_slice(&next);
        controls.extend_from_slice(&u);

        // slide the left-Riemann window [pos - nh, pos) forward by one point
        since_refresh += 1;
        if since_refresh >= nh {
            sum_sq = squared_sum(&values[(pos + 1 - nh) * n..(pos + 1) * n]);
            since_refresh = 0;
        } else {
            sum_sq += squared_sum(&values[pos * n..(pos + 1) * n])
                - squared_sum(&values[(pos - nh) * n..(pos - nh + 1) * n]);
        }
        pos += 1;
    }

    let (exit_step, censored) = match exited_at {
        Some(s) => (s, false),
        None => {
            let window = &values[(pos - nh) * n..(pos + 1) * n];
            let seg = Segment::with_sum_sq(window, n, dt, sum_sq);
            // a fixed-horizon run is never censored: the horizon is its stopping time
            let inside = rule == StoppingRule::RegionExit
                && coeffs.in_region(&seg, &values[pos * n..(pos + 1) * n]);
            (grid.n_forward(), inside)
        }
    };

    let seg_values = values[(pos - nh) * n..(pos + 1) * n].to_vec();
    let current = values[pos * n..(pos + 1) * n].to_vec();
    let exit_state =
        ControlledState::new(SegmentPath::from_values(*grid, n, seg_values)?, current)?;
    let trajectory = Trajectory::new(*grid, n, start_step as i64 - nh as i64, values)?;

    Ok(PathResult {
        trajectory,
        start_step,
        exit_step,
        exit_time: grid.time_of(exit_step),
        censored,
        exit_state,
        running_cost_integral: running,
        controls,
        control_dim: m,
    })
}

/// Runs `f` for every path index and returns results in index order. The
/// first failure (by index) is reported with its path index attached.
pub(crate) fn map_paths<T, F>(n_paths: usize, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = match workers {
        Some(1) => (0..n_paths).map(&f).collect(),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| SfdeError::InvalidParameter(format!("thread pool: {e}")))?;
            pool.install(|| (0..n_paths).into_par_iter().map(&f).collect())
        }
        None => (0..n_paths).into_par_iter().map(&f).collect(),
    };
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| e.on_path(i)))
        .collect()
}

/// Simulates `n_paths` paths (path `i` uses noise stream `i`) and reduces
/// `payoff` into an estimate. The result does not depend on `workers`.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_batch(
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    init: &ControlledState,
    grid: &SimulationGrid,
    batch: &BatchConfig,
    rule: StoppingRule,
    payoff: &(dyn Fn(&PathResult) -> f64 + Sync),
) -> Result<MonteCarloEstimate> {
    let (samples, censored) = batch_samples(coeffs, law, init, grid, batch, rule, payoff)?;
    Ok(MonteCarloEstimate::from_samples(
        &samples,
        batch.master_seed,
        censored,
    ))
}

/// Per-path payoffs in index order plus the censored fraction.
pub fn batch_samples(
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    init: &ControlledState,
    grid: &SimulationGrid,
    batch: &BatchConfig,
    rule: StoppingRule,
    payoff: &(dyn Fn(&PathResult) -> f64 + Sync),
) -> Result<(Vec<f64>, f64)> {
    if batch.n_paths < 2 {
        return Err(SfdeError::InvalidParameter(
            "a batch needs at least 2 paths".into(),
        ));
    }
    let d = coeffs.noise_dim();
    let rows = map_paths(batch.n_paths, batch.workers, |i| {
        let stream = batch.stream(i, d);
        let res = simulate_path_with(coeffs, law, init, grid, &stream, 0.0, rule, &mut |_| {})?;
        Ok((payoff(&res), res.censored))
    })?;
    let censored = rows.iter().filter(|(_, c)| *c).count() as f64 / rows.len() as f64;
    Ok((rows.into_iter().map(|(p, _)| p).collect(), censored))
}

/// Simulates on `[0, a]`, restarts from `(S_{t1}, S(t1))` with the same
/// noise stream, and returns the largest state deviation on `[t1, a]`.
pub fn flow_property_check(
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    init: &ControlledState,
    grid: &SimulationGrid,
    t1: f64,
    stream: &NoiseStream,
) -> Result<f64> {
    let k1 = grid.step_of(t1)?;
    if k1 > grid.n_forward() {
        return Err(SfdeError::InvalidParameter(format!(
            "t1 = {t1} beyond the horizon"
        )));
    }
    let rule = StoppingRule::FixedHorizon;
    let full = simulate_path_with(coeffs, law, init, grid, stream, 0.0, rule, &mut |_| {})?;
    let segment = segment_extract(&full.trajectory, t1)?;
    let current = full.state_at(k1).expect("covered by a full path").to_vec();
    let restart_state = ControlledState::new(segment, current)?;
    let restarted = simulate_path_with(
        coeffs,
        law,
        &restart_state,
        grid,
        stream,
        t1,
        rule,
        &mut |_| {},
    )?;
    let mut worst = 0.0f64;
    for k in k1..=grid.n_forward() {
        let a = full.state_at(k).expect("full path");
        let b = restarted.state_at(k).expect("restarted path");
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

/// Second-moment curve and mean-square increment exponent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub times: Vec<f64>,
    /// `E(‖S_t‖² + |S(t)|²)` at each grid time.
    pub second_moment: Vec<f64>,
    pub max_second_moment: f64,
    pub lags: Vec<f64>,
    /// `E|S(t + ℓ) - S(t)|²` averaged over `t` and paths.
    pub mean_square_increment: Vec<f64>,
    /// Least-squares slope of `log msd` against `log lag`; `None` when the
    /// increments vanish.
    pub beta: Option<f64>,
}

pub fn moment_diagnostics(
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    init: &ControlledState,
    grid: &SimulationGrid,
    batch: &BatchConfig,
) -> Result<MomentReport> {
    if batch.n_paths < 100 {
        return Err(SfdeError::InvalidParameter(
            "moment diagnostics need at least 100 paths".into(),
        ));
    }
    let nf = grid.n_forward();
    let max_lag = (nf / 4).clamp(1, 10);
    let d = coeffs.noise_dim();
    let per_path = map_paths(batch.n_paths, batch.workers, |i| {
        let stream = batch.stream(i, d);
        let mut moments = Vec::with_capacity(nf + 1);
        let res = simulate_path_with(
            coeffs,
            law,
            init,
            grid,
            &stream,
            0.0,
            StoppingRule::FixedHorizon,
            &mut |v| {
                moments.push(v.segment.norm_squared() + squared_sum(v.current));
            },
        )?;
        let (seg, x) = res.exit_state.view();
        moments.push(seg.norm_squared() + squared_sum(x));
        let mut msd = vec![0.0; max_lag];
        for (l, slot) in msd.iter_mut().enumerate() {
            let lag = l + 1;
            let mut acc = 0.0;
            for k in 0..=(nf - lag) {
                let a = res.state_at(k).expect("fixed horizon");
                let b = res.state_at(k + lag).expect("fixed horizon");
                acc += a.iter().zip(b).map(|(p, q)| (q - p) * (q - p)).sum::<f64>();
            }
            *slot = acc / (nf - lag + 1) as f64;
        }
        Ok((moments, msd))
    })?;

    let np = per_path.len() as f64;
    let mut second_moment = vec![0.0; nf + 1];
    let mut msd = vec![0.0; max_lag];
    for (mom, inc) in &per_path {
        for (acc, v) in second_moment.iter_mut().zip(mom) {
            *acc += v;
        }
        for (acc, v) in msd.iter_mut().zip(inc) {
            *acc += v;
        }
    }
    second_moment.iter_mut().for_each(|v| *v /= np);
    msd.iter_mut().for_each(|v| *v /= np);
    let lags: Vec<f64> = (1..=max_lag).map(|l| grid.time_of(l)).collect();
    let beta = if msd.iter().all(|v| *v > 0.0) && max_lag >= 2 {
        Some(log_log_slope(&lags, &msd))
    } else {
        None
    };
    Ok(MomentReport {
        times: (0..=nf).map(|k| grid.time_of(k)).collect(),
        max_second_moment: second_moment.iter().cloned().fold(f64::MIN, f64::max),
        second_moment,
        lags,
        mean_square_increment: msd,
        beta,
    })
}

/// Ordinary least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Empirical `P((S_t, S(t)) ∈ A)` for the unstopped process.
#[allow(clippy::too_many_arguments)]
pub fn transition_probability_estimate(
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    init: &ControlledState,
    grid: &SimulationGrid,
    t: f64,
    event: &(dyn Fn(&ControlledState) -> bool + Sync),
    batch: &BatchConfig,
) -> Result<MonteCarloEstimate> {
    let step = grid.step_of(t)?;
    if step == 0 {
        let hit = if event(init) { 1.0 } else { 0.0 };
        return Ok(MonteCarloEstimate::from_samples(
            &vec![hit; batch.n_paths],
            batch.master_seed,
            0.0,
        ));
    }
    let sub = grid.with_horizon(t)?;
    let (samples, _) = batch_samples(
        coeffs,
        law,
        init,
        &sub,
        batch,
        StoppingRule::FixedHorizon,
        &|res| if event(&res.exit_state) { 1.0 } else { 0.0 },
    )?;
    Ok(MonteCarloEstimate::from_samples(
        &samples,
        batch.master_seed,
        0.0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConstantLaw, FnCoefficients, LinearDelayModel};

    fn scalar_state(grid: SimulationGrid, x: f64) -> ControlledState {
        ControlledState::from_segment(SegmentPath::constant(grid, &[x]).unwrap())
    }

    #[test]
    fn zero_dynamics_stay_constant() {
        let grid = SimulationGrid::new(0.1, 1.0, 0.01).unwrap();
        let model = LinearDelayModel::default();
        let res = simulate_path(
            &model,
            &ConstantLaw::scalar(0.0),
            &scalar_state(grid, 1.7),
            &grid,
            &NoiseStream::new(1, 0, 1),
            0.0,
        )
        .unwrap();
        assert!(res.trajectory.values().iter().all(|&v| v == 1.7));
        assert!(res.censored);
        assert_eq!(res.exit_time, 1.0);
    }

    #[test]
    fn linear_ode_reaches_e() {
        let grid = SimulationGrid::new(1e-4, 1.0, 1e-4).unwrap();
        let model = LinearDelayModel {
            drift_x: 1.0,
            ..LinearDelayModel::default()
        };
        let res = simulate_path(
            &model,
            &ConstantLaw::scalar(0.0),
            &scalar_state(grid, 1.0),
            &grid,
            &NoiseStream::new(1, 0, 1),
            0.0,
        )
        .unwrap();
        let end = res.state_at(grid.n_forward()).unwrap()[0];
        // Euler error e·dt/2 to first order
        assert!((end - std::f64::consts::E).abs() < 2e-4, "{end}");
    }

    #[test]
    fn deterministic_descent_exits_at_one() {
        let grid = SimulationGrid::new(0.01, 2.0, 0.01).unwrap();
        let model = LinearDelayModel {
            drift_const: -1.0,
            region: Some((0.0, f64::INFINITY)),
            ..LinearDelayModel::default()
        };
        let res = simulate_path(
            &model,
            &ConstantLaw::scalar(0.0),
            &scalar_state(grid, 1.0),
            &grid,
            &NoiseStream::new(1, 0, 1),
            0.0,
        )
        .unwrap();
        let info = exit_time(&res);
        assert!(!info.censored);
        assert!(
            (info.time - 1.0).abs() <= grid.dt() + 1e-12,
            "{}",
            info.time
        );
        assert!(info.state.current()[0] <= 0.0);
    }

    #[test]
    fn immediate_exit_and_censoring() {
        let grid = SimulationGrid::new(0.1, 1.0, 0.1).unwrap();
        let outside = LinearDelayModel {
            region: Some((2.0, 3.0)),
            ..LinearDelayModel::default()
        };
        let init = scalar_state(grid, 1.0);
        let res = simulate_path(
            &outside,
            &ConstantLaw::scalar(0.0),
            &init,
            &grid,
            &NoiseStream::new(1, 0, 1),
            0.5,
        )
        .unwrap();
        assert_eq!(res.exit_time, 0.5);
        assert!(!res.censored);
        assert_eq!(res.exit_state.current(), init.current());
        assert_eq!(res.running_cost_integral, 0.0);
    }

    #[test]
    fn misaligned_start_and_blow_up() {
        let grid = SimulationGrid::new(0.1, 1.0, 0.1).unwrap();
        let init = scalar_state(grid, 1.0);
        let model = LinearDelayModel::default();
        let law = ConstantLaw::scalar(0.0);
        let s = NoiseStream::new(1, 0, 1);
        assert!(matches!(
            simulate_path(&model, &law, &init, &grid, &s, 0.05),
            Err(SfdeError::Alignment { .. })
        ));
        let explosive = LinearDelayModel {
            drift_x: 1e4,
            ..LinearDelayModel::default()
        };
        let err = simulate_path(&explosive, &law, &init, &grid, &s, 0.0).unwrap_err();
        assert!(matches!(err, SfdeError::BlowUp { step: 4, .. }), "{err:?}");
    }

    #[test]
    fn running_cost_counts_surviving_steps() {
        let grid = SimulationGrid::new(0.1, 1.0, 0.1).unwrap();
        let model = LinearDelayModel {
            running_cost: 1.0,
            ..LinearDelayModel::default()
        };
        let res = simulate_path(
            &model,
            &ConstantLaw::scalar(0.0),
            &scalar_state(grid, 0.0),
            &grid,
            &NoiseStream::new(3, 0, 1),
            0.0,
        )
        .unwrap();
        assert!((res.running_cost_integral - 1.0).abs() < 1e-12);
        assert_eq!(res.controls.len(), 10);
    }

    #[test]
    fn constant_payoff_batch() {
        let grid = SimulationGrid::new(0.1, 1.0, 0.1).unwrap();
        let model = LinearDelayModel::gbm(0.05, 0.2);
        let est = monte_carlo_batch(
            &model,
            &ConstantLaw::scalar(0.0),
            &scalar_state(grid, 1.0),
            &grid,
            &BatchConfig::new(50, 1),
            StoppingRule::RegionExit,
            &|_| 1.0,
        )
        .unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.censored_fraction, 1.0);
    }

    #[test]
    fn batch_reports_failing_path() {
        let grid = SimulationGrid::new(0.1, 1.0, 0.1).unwrap();
        let model = LinearDelayModel {
            drift_x: 1e4,
            ..LinearDelayModel::default()
        };
        let err = monte_carlo_batch(
            &model,
            &ConstantLaw::scalar(0.0),
            &scalar_state(grid, 1.0),
            &grid,
            &BatchConfig::new(4, 1).with_workers(2),
            StoppingRule::RegionExit,
            &|_| 1.0,
        )
        .unwrap_err();
        assert_eq!(
            err,
            SfdeError::BlowUp {
                step: 4,
                path_index: Some(0)
            }
        );
    }

    #[test]
    fn flow_property_for_deterministic_delay_dynamics() {
        let grid = SimulationGrid::new(0.5, 2.0, 0.01).unwrap();
        let model = FnCoefficients::new(1, 1, 0)
            .drift(|seg, x, _, out| out[0] = -x[0] + 0.5 * seg.oldest()[0] + seg.norm());
        let init =
            ControlledState::from_segment(SegmentPath::from_fn(grid, |s| (3.0 * s).cos()).unwrap());
        for t1 in [0.0, 0.37, 1.0, 2.0] {
            let dev = flow_property_check(
                &model,
                &ConstantLaw::none(),
                &init,
                &grid,
                t1,
                &NoiseStream::new(5, 0, 1),
            )
            .unwrap();
            assert!(dev <= 1e-12, "t1={t1} dev={dev}");
        }
    }

    #[test]
    fn moments_degenerate_for_static_process() {
        let grid = SimulationGrid::new(0.1, 1.0, 0.01).unwrap();
        let rep = moment_diagnostics(
            &LinearDelayModel::default(),
            &ConstantLaw::scalar(0.0),
            &scalar_state(grid, 2.0),
            &grid,
            &BatchConfig::new(100, 1),
        )
        .unwrap();
        assert!(rep.beta.is_none());
        let first = rep.second_moment[0];
        assert!(rep.second_moment.iter().all(|&v| (v - first).abs() < 1e-12));
        // ‖φ‖² + x² = 0.1·4 + 4
        assert!((first - 4.4).abs() < 1e-12);
    }

    #[test]
    fn transition_probability_trivial_events() {
        let grid = SimulationGrid::new(0.1, 1.0, 0.1).unwrap();
        let model = LinearDelayModel::brownian(1.0, None);
        let init = scalar_state(grid, 0.0);
        let law = ConstantLaw::scalar(0.0);
        let b = BatchConfig::new(100, 3);
        let yes = transition_probability_estimate(&model, &law, &init, &grid, 1.0, &|_| true, &b)
            .unwrap();
        let no = transition_probability_estimate(&model, &law, &init, &grid, 1.0, &|_| false, &b)
            .unwrap();
        assert_eq!((yes.mean, yes.std_error), (1.0, 0.0));
        assert_eq!((no.mean, no.std_error), (0.0, 0.0));
    }
}
