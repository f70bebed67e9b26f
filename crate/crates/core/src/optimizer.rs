//! Cost functionals, pointwise HJB residuals over a discretized control set,
//! policy search with common random numbers, and admissibility probing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfdeError};
use crate::estimate::{paired_difference, MonteCarloEstimate};
use crate::functional::SmoothFunctional;
use crate::generator::{generator_apply, GeneratorWorkspace};
use crate::grid::SimulationGrid;
use crate::model::{Coefficients, ControlBox, ControlLaw};
use crate::segment::{ControlledState, Segment};
use crate::simulator::{batch_samples, map_paths, simulate_path_with, BatchConfig, StoppingRule};

/// Direction of optimization. The value problem is an infimum; the
/// portfolio problem is a supremum of expected utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Minimize,
    Maximize,
}

impl Objective {
    /// True when `a` is strictly better than `b`.
    pub fn better(&self, a: f64, b: f64) -> bool {
        match self {
            Objective::Minimize => a < b,
            Objective::Maximize => a > b,
        }
    }
}

/// Finite set of control vectors covering `U`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlGrid {
    points: Vec<Vec<f64>>,
    resolution: f64,
}

impl ControlGrid {
    /// Equally spaced points on `[lo, hi]` with spacing close to `step`;
    /// endpoints are always included.
    pub fn interval(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo <= hi) || !(step > 0.0) {
            return Err(SfdeError::InvalidParameter(format!(
                "bad control interval [{lo}, {hi}] with step {step}"
            )));
        }
        let n = ((hi - lo) / step).round().max(1.0) as usize;
        let points = (0..=n)
            .map(|i| vec![lo + (hi - lo) * i as f64 / n as f64])
            .collect();
        Ok(Self {
            points,
            resolution: (hi - lo) / n as f64,
        })
    }

    /// Tensor grid over a box with `per_axis` points on each axis.
    pub fn from_box(bounds: &ControlBox, per_axis: usize) -> Result<Self> {
        if per_axis < 2 {
            return Err(SfdeError::InvalidParameter(
                "need at least 2 points per axis".into(),
            ));
        }
        let mut points = vec![Vec::new()];
        for (lo, hi) in bounds.lower.iter().zip(&bounds.upper) {
            let axis: Vec<f64> = (0..per_axis)
                .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
                .collect();
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        let resolution = bounds
            .lower
            .iter()
            .zip(&bounds.upper)
            .map(|(l, h)| (h - l) / (per_axis - 1) as f64)
            .fold(0.0, f64::max);
        Ok(Self { points, resolution })
    }

    pub fn explicit(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(SfdeError::EmptyControlGrid);
        }
        Ok(Self {
            points,
            resolution: 0.0,
        })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }
}

/// `inf_v [A^v f + L^v]` (or `sup`) at one state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HjbReport {
    #[serde(skip)]
    pub state: ControlledState,
    pub objective: Objective,
    pub residual: f64,
    pub argmin_control: Vec<f64>,
    pub per_control_values: Vec<(Vec<f64>, f64)>,
}

pub fn cost_functional(
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    init: &ControlledState,
    grid: &SimulationGrid,
    batch: &BatchConfig,
) -> Result<MonteCarloEstimate> {
    let (samples, censored) =
        cost_samples(coeffs, law, init, grid, batch, StoppingRule::RegionExit)?;
    Ok(MonteCarloEstimate::from_samples(
        &samples,
        batch.master_seed,
        censored,
    ))
}

/// Per-path `∫₀^τ L dt + ψ(S_τ, S(τ))`; censored paths use the horizon state.
pub fn cost_samples(
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    init: &ControlledState,
    grid: &SimulationGrid,
    batch: &BatchConfig,
    rule: StoppingRule,
) -> Result<(Vec<f64>, f64)> {
    let (seg, x) = init.view();
    if rule == StoppingRule::RegionExit && !coeffs.in_region(&seg, x) {
        return Err(SfdeError::Precondition(
            "initial state lies outside G".into(),
        ));
    }
    batch_samples(coeffs, law, init, grid, batch, rule, &|res| {
        let (seg, x) = res.exit_state.view();
        res.running_cost_integral + coeffs.terminal_cost(&seg, x)
    })
}

/// Evaluates `A^v f + L^v` at every control point and keeps the best.
pub fn hjb_residual(
    f: &dyn SmoothFunctional,
    coeffs: &dyn Coefficients,
    controls: &ControlGrid,
    state: &ControlledState,
    h: f64,
    objective: Objective,
) -> Result<HjbReport> {
    if controls.points.is_empty() {
        return Err(SfdeError::EmptyControlGrid);
    }
    let (seg, x) = state.view();
    let mut per_control_values = Vec::with_capacity(controls.points.len());
    for v in &controls.points {
        let value = generator_apply(f, coeffs, v, state, h)? + coeffs.running_cost(&seg, x, v);
        per_control_values.push((v.clone(), value));
    }
    let mut best = 0;
    for (i, (_, value)) in per_control_values.iter().enumerate() {
        if objective.better(*value, per_control_values[best].1) {
            best = i;
        }
    }
    Ok(HjbReport {
        state: state.clone(),
        objective,
        residual: per_control_values[best].1,
        argmin_control: per_control_values[best].0.clone(),
        per_control_values,
    })
}

/// The control attaining the pointwise infimum (or supremum).
pub fn pointwise_optimal_control(
    f: &dyn SmoothFunctional,
    coeffs: &dyn Coefficients,
    controls: &ControlGrid,
    state: &ControlledState,
    h: f64,
    objective: Objective,
) -> Result<Vec<f64>> {
    Ok(hjb_residual(f, coeffs, controls, state, h, objective)?.argmin_control)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedPolicy {
    pub law_id: String,
    pub estimate: MonteCarloEstimate,
    /// Per-path payoffs, kept for paired comparisons.
    pub payoffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRanking {
    pub objective: Objective,
    /// Best first.
    pub entries: Vec<RankedPolicy>,
}

impl PolicyRanking {
    /// Sorts best first; ties keep the given order.
    pub fn from_entries(mut entries: Vec<RankedPolicy>, objective: Objective) -> Self {
        entries.sort_by(|a, b| {
            let ord = a.estimate.mean.total_cmp(&b.estimate.mean);
            match objective {
                Objective::Minimize => ord,
                Objective::Maximize => ord.reverse(),
            }
        });
        Self { objective, entries }
    }

    pub fn best(&self) -> &RankedPolicy {
        &self.entries[0]
    }

    /// Zero-based rank of a law.
    pub fn rank_of(&self, law_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.law_id == law_id)
    }

    pub fn get(&self, law_id: &str) -> Option<&RankedPolicy> {
        self.entries.iter().find(|e| e.law_id == law_id)
    }

    /// `E[payoff_a - payoff_b]` from the common-random-number pairs.
    pub fn paired_difference(&self, a: &str, b: &str) -> Option<MonteCarloEstimate> {
        let pa = self.get(a)?;
        let pb = self.get(b)?;
        Some(paired_difference(
            &pa.payoffs,
            &pb.payoffs,
            pa.estimate.master_seed,
        ))
    }

    pub const CSV_HEADER: [&'static str; 5] =
        ["rank", "law_id", "mean", "std_error", "censored_fraction"];

    pub fn csv_records(&self) -> Vec<[String; 5]> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                [
                    (i + 1).to_string(),
                    e.law_id.clone(),
                    e.estimate.mean.to_string(),
                    e.estimate.std_error.to_string(),
                    e.estimate.censored_fraction.to_string(),
                ]
            })
            .collect()
    }
}

/// Evaluates each law's cost with the same master seed (common random
/// numbers) and sorts best first. Ties keep family order.
pub fn policy_search(
    coeffs: &dyn Coefficients,
    family: &[(&str, &dyn ControlLaw)],
    init: &ControlledState,
    grid: &SimulationGrid,
    batch: &BatchConfig,
    rule: StoppingRule,
    objective: Objective,
) -> Result<PolicyRanking> {
    if family.is_empty() {
        return Err(SfdeError::InvalidParameter("policy family is empty".into()));
    }
    let mut entries = Vec::with_capacity(family.len());
    for (id, law) in family {
        let (payoffs, censored) = cost_samples(coeffs, *law, init, grid, batch, rule)?;
        entries.push(RankedPolicy {
            law_id: id.to_string(),
            estimate: MonteCarloEstimate::from_samples(&payoffs, batch.master_seed, censored),
            payoffs,
        });
    }
    Ok(PolicyRanking::from_entries(entries, objective))
}

/// Verification-theorem check for a candidate value `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerificationReport {
    pub f_init: f64,
    /// `J^u = E[∫₀^τ L dt + ψ(exit)]`
    pub cost: MonteCarloEstimate,
    /// Smallest `A^u f + L^u` seen along the paths.
    pub min_residual: f64,
}

impl VerificationReport {
    /// `f(init) ≤ J^u + k·se`; applies when `min_residual ≥ 0`.
    pub fn bound_holds(&self, k: f64) -> bool {
        self.f_init <= self.cost.mean + k * self.cost.std_error
    }
}

pub fn verification_check(
    f: &dyn SmoothFunctional,
    coeffs: &dyn Coefficients,
    law: &dyn ControlLaw,
    init: &ControlledState,
    grid: &SimulationGrid,
    batch: &BatchConfig,
) -> Result<VerificationReport> {
    let (seg0, x0) = init.view();
    let f_init = f.value(&seg0, x0);
    let m_gamma = grid.n_history().min(4);
    let (n, d) = (coeffs.state_dim(), coeffs.noise_dim());
    let rows = map_paths(batch.n_paths, batch.workers, |i| {
        let stream = batch.stream(i, d);
        let mut ws = GeneratorWorkspace::new(n, d);
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
                let a = ws.apply(f, coeffs, v.control, v.segment, v.current, m_gamma);
                let l = coeffs.running_cost(v.segment, v.current, v.control);
                min_res = min_res.min(a + l);
            },
        )?;
        let (seg, x) = res.exit_state.view();
        Ok((
            res.running_cost_integral + coeffs.terminal_cost(&seg, x),
            min_res,
            res.censored,
        ))
    })?;
    let censored = rows.iter().filter(|r| r.2).count() as f64 / rows.len().max(1) as f64;
    let costs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    Ok(VerificationReport {
        f_init,
        cost: MonteCarloEstimate::from_samples(&costs, batch.master_seed, censored),
        min_residual: rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
    })
}

/// Region sampled by [`admissibility_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub state_dim: usize,
    pub x_range: (f64, f64),
    pub segment_range: (f64, f64),
}

/// Ratios above this are reported as non-Lipschitz.
pub const NON_LIPSCHITZ_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    /// `max |u(φ,x) - u(η,y)|² / (|x-y|² + ‖φ-η‖²)`
    pub lipschitz_ratio_max: f64,
    /// `max |u(φ,x)|² / (1 + |x|² + ‖φ‖²)`
    pub growth_ratio_max: f64,
    pub non_lipschitz_warning: bool,
}

/// Flattened `(φ, x)` used by the probe.
struct ProbeState {
    seg: Vec<f64>,
    x: Vec<f64>,
}

impl ProbeState {
    fn midpoint(&self, other: &Self) -> Self {
        let mid = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| 0.5 * (p + q)).collect();
        Self {
            seg: mid(&self.seg, &other.seg),
            x: mid(&self.x, &other.x),
        }
    }
}

struct Prober<'a> {
    law: &'a dyn ControlLaw,
    dim: usize,
    dt: f64,
}

impl Prober<'_> {
    fn control(&self, s: &ProbeState) -> Vec<f64> {
        let seg = Segment::new(&s.seg, self.dim, self.dt);
        let mut u = vec![0.0; self.law.control_dim()];
        self.law.evaluate(&seg, &s.x, &mut u);
        u
    }

    fn distance_sq(&self, a: &ProbeState, b: &ProbeState) -> f64 {
        let diff: Vec<f64> = a.seg.iter().zip(&b.seg).map(|(p, q)| p - q).collect();
        let seg_sq = Segment::new(&diff, self.dim, self.dt).norm_squared();
        let x_sq: f64 = a.x.iter().zip(&b.x).map(|(p, q)| (p - q) * (p - q)).sum();
        seg_sq + x_sq
    }

    fn ratio(&self, a: &ProbeState, b: &ProbeState) -> f64 {
        let dist = self.distance_sq(a, b);
        if dist <= 0.0 {
            return 0.0;
        }
        let ua = self.control(a);
        let ub = self.control(b);
        let du: f64 = ua.iter().zip(&ub).map(|(p, q)| (p - q) * (p - q)).sum();
        du / dist
    }

    fn growth(&self, s: &ProbeState) -> f64 {
        let u = self.control(s);
        let norm_sq = Segment::new(&s.seg, self.dim, self.dt).norm_squared();
        let x_sq: f64 = s.x.iter().map(|v| v * v).sum();
        u.iter().map(|v| v * v).sum::<f64>() / (1.0 + x_sq + norm_sq)
    }

    /// Halving the pair along the chord never lowers the ratio when the
    /// half with the larger ratio is kept; a jump makes it diverge.
    fn refine(&self, mut a: ProbeState, mut b: ProbeState) -> f64 {
        let mut best = self.ratio(&a, &b);
        for _ in 0..60 {
            if self.distance_sq(&a, &b) < 1e-12 {
                break;
            }
            let mid = a.midpoint(&b);
            let left = self.ratio(&a, &mid);
            let right = self.ratio(&mid, &b);
            if left >= right {
                b = mid;
                best = best.max(left);
            } else {
                a = mid;
                best = best.max(right);
            }
        }
        best
    }
}

/// Empirical lower bounds on the Lipschitz and linear-growth constants of a
/// control law, from random state pairs in `sampling` refined by bisection.
pub fn admissibility_probe(
    law: &dyn ControlLaw,
    grid: &SimulationGrid,
    n_samples: usize,
    seed: u64,
    sampling: &SamplingBox,
) -> Result<AdmissibilityReport> {
    if n_samples < 100 {
        return Err(SfdeError::InvalidParameter(
            "probe needs at least 100 samples".into(),
        ));
    }
    let dim = sampling.state_dim;
    let n_points = grid.n_history() + 1;
    let prober = Prober {
        law,
        dim,
        dt: grid.dt(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| ProbeState {
        seg: (0..n_points * dim)
            .map(|_| rng.gen_range(sampling.segment_range.0..=sampling.segment_range.1))
            .collect(),
        x: (0..dim)
            .map(|_| rng.gen_range(sampling.x_range.0..=sampling.x_range.1))
            .collect(),
    };

    let mut growth_max = 0.0f64;
    let mut pairs: Vec<(f64, ProbeState, ProbeState)> = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let a = draw(&mut rng);
        let b = if i % 2 == 0 {
            draw(&mut rng)
        } else {
            let scale = 10f64.powf(-rng.gen_range(1.0..5.0));
            ProbeState {
                seg: a
                    .seg
                    .iter()
                    .map(|v| v + scale * rng.gen_range(-1.0..1.0))
                    .collect(),
                x: a.x
                    .iter()
                    .map(|v| v + scale * rng.gen_range(-1.0..1.0))
                    .collect(),
            }
        };
        growth_max = growth_max.max(prober.growth(&a)).max(prober.growth(&b));
        pairs.push((prober.ratio(&a, &b), a, b));
    }
    pairs.sort_by(|p, q| q.0.total_cmp(&p.0));
    let mut lipschitz_max = pairs.first().map(|p| p.0).unwrap_or(0.0);
    for (_, a, b) in pairs.into_iter().take(8) {
        lipschitz_max = lipschitz_max.max(prober.refine(a, b));
    }
    Ok(AdmissibilityReport {
        lipschitz_ratio_max: lipschitz_max,
        growth_ratio_max: growth_max,
        non_lipschitz_warning: lipschitz_max > NON_LIPSCHITZ_THRESHOLD,
    })
}
