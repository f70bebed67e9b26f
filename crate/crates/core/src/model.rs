//! Coefficient sets `(μ, σ, L, ψ, G)` and Markov control laws.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfdeError};
use crate::segment::Segment;

/// Drift, diffusion, costs and the region `G` of a controlled SFDE.
///
/// Coefficients receive the current segment `S_t`, the current value `S(t)`
/// and the control `u`. Vector outputs are written into caller-provided
/// buffers; the diffusion matrix is row-major `n × d`.
pub trait Coefficients: Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    fn drift(&self, seg: &Segment<'_>, x: &[f64], u: &[f64], out: &mut [f64]);

    fn diffusion(&self, seg: &Segment<'_>, x: &[f64], u: &[f64], out: &mut [f64]);

    fn running_cost(&self, _seg: &Segment<'_>, _x: &[f64], _u: &[f64]) -> f64 {
        0.0
    }

    fn terminal_cost(&self, _seg: &Segment<'_>, _x: &[f64]) -> f64 {
        0.0
    }

    fn in_region(&self, _seg: &Segment<'_>, _x: &[f64]) -> bool {
        true
    }
}

/// Box-shaped control set `U = [lo₁, hi₁] × … × [lo_m, hi_m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(SfdeError::InvalidParameter("malformed control box".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, u: &mut [f64]) {
        for ((v, lo), hi) in u.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((v, lo), hi)| lo <= v && v <= hi)
    }
}

/// Feedback law `u = u(S_t, S(t))`.
pub trait ControlLaw: Sync {
    fn control_dim(&self) -> usize;

    /// Unconstrained law output.
    fn evaluate_raw(&self, seg: &Segment<'_>, x: &[f64], out: &mut [f64]);

    fn bounds(&self) -> Option<&ControlBox> {
        None
    }

    /// Law output projected onto `U`.
    fn evaluate(&self, seg: &Segment<'_>, x: &[f64], out: &mut [f64]) {
        self.evaluate_raw(seg, x, out);
        if let Some(b) = self.bounds() {
            b.clamp(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantLaw {
    value: Vec<f64>,
}

impl ConstantLaw {
    pub fn new(value: Vec<f64>) -> Self {
        Self { value }
    }

    pub fn scalar(v: f64) -> Self {
        Self { value: vec![v] }
    }

    /// Placeholder law for systems without a control input.
    pub fn none() -> Self {
        Self { value: Vec::new() }
    }
}

impl ControlLaw for ConstantLaw {
    fn control_dim(&self) -> usize {
        self.value.len()
    }

    fn evaluate_raw(&self, _seg: &Segment<'_>, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.value);
    }
}

/// Law defined by a closure, optionally clamped to a box.
pub struct FnLaw<F> {
    dim: usize,
    f: F,
    bounds: Option<ControlBox>,
}

impl<F> FnLaw<F>
where
    F: Fn(&Segment<'_>, &[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self {
            dim,
            f,
            bounds: None,
        }
    }

    pub fn clamped(mut self, bounds: ControlBox) -> Self {
        self.bounds = Some(bounds);
        self
    }
}

impl<F> ControlLaw for FnLaw<F>
where
    F: Fn(&Segment<'_>, &[f64], &mut [f64]) + Sync,
{
    fn control_dim(&self) -> usize {
        self.dim
    }

    fn evaluate_raw(&self, seg: &Segment<'_>, x: &[f64], out: &mut [f64]) {
        (self.f)(seg, x, out)
    }

    fn bounds(&self) -> Option<&ControlBox> {
        self.bounds.as_ref()
    }
}

type VecFn = Box<dyn Fn(&Segment<'_>, &[f64], &[f64], &mut [f64]) + Send + Sync>;
type CostFn = Box<dyn Fn(&Segment<'_>, &[f64], &[f64]) -> f64 + Send + Sync>;
type StateFn<T> = Box<dyn Fn(&Segment<'_>, &[f64]) -> T + Send + Sync>;

/// Coefficient set assembled from closures. Unset parts default to zero
/// dynamics, zero costs and `G` equal to the whole space.
pub struct FnCoefficients {
    n: usize,
    d: usize,
    m: usize,
    drift: VecFn,
    diffusion: VecFn,
    running: CostFn,
    terminal: StateFn<f64>,
    region: StateFn<bool>,
}

impl FnCoefficients {
    pub fn new(state_dim: usize, noise_dim: usize, control_dim: usize) -> Self {
        Self {
            n: state_dim,
            d: noise_dim,
            m: control_dim,
            drift: Box::new(|_, _, _, out| out.fill(0.0)),
            diffusion: Box::new(|_, _, _, out| out.fill(0.0)),
            running: Box::new(|_, _, _| 0.0),
            terminal: Box::new(|_, _| 0.0),
            region: Box::new(|_, _| true),
        }
    }

    pub fn drift(
        mut self,
        f: impl Fn(&Segment<'_>, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.drift = Box::new(f);
        self
    }

    pub fn diffusion(
        mut self,
        f: impl Fn(&Segment<'_>, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = Box::new(f);
        self
    }

    pub fn running_cost(
        mut self,
        f: impl Fn(&Segment<'_>, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.running = Box::new(f);
        self
    }

    pub fn terminal_cost(
        mut self,
        f: impl Fn(&Segment<'_>, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.terminal = Box::new(f);
        self
    }

    pub fn region(
        mut self,
        f: impl Fn(&Segment<'_>, &[f64]) -> bool + Send + Sync + 'static,
    ) -> Self {
        self.region = Box::new(f);
        self
    }
}

impl Coefficients for FnCoefficients {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn noise_dim(&self) -> usize {
        self.d
    }
    fn control_dim(&self) -> usize {
        self.m
    }
    fn drift(&self, seg: &Segment<'_>, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.drift)(seg, x, u, out)
    }
    fn diffusion(&self, seg: &Segment<'_>, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.diffusion)(seg, x, u, out)
    }
    fn running_cost(&self, seg: &Segment<'_>, x: &[f64], u: &[f64]) -> f64 {
        (self.running)(seg, x, u)
    }
    fn terminal_cost(&self, seg: &Segment<'_>, x: &[f64]) -> f64 {
        (self.terminal)(seg, x)
    }
    fn in_region(&self, seg: &Segment<'_>, x: &[f64]) -> bool {
        (self.region)(seg, x)
    }
}

/// Terminal payoff `ψ(x)` choices for table-driven models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalCost {
    Zero,
    One,
    Identity,
    Square,
    /// `max(x, 0)^p`
    Power {
        exponent: f64,
    },
}

impl TerminalCost {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TerminalCost::Zero => 0.0,
            TerminalCost::One => 1.0,
            TerminalCost::Identity => x,
            TerminalCost::Square => x * x,
            TerminalCost::Power { exponent } => x.max(0.0).powf(exponent),
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Scalar linear delay model, used for user-supplied coefficient tables:
///
/// ```text
/// dS = (a_x S(t) + a_r S(t-r) + a_0 + a_u u S(t)) dt
///    + (b_x S(t) + b_r S(t-r) + b_0 + b_u u S(t)) dW
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearDelayModel {
    #[serde(default)]
    pub drift_x: f64,
    #[serde(default)]
    pub drift_delay: f64,
    #[serde(default)]
    pub drift_const: f64,
    #[serde(default)]
    pub drift_control: f64,
    #[serde(default)]
    pub diffusion_x: f64,
    #[serde(default)]
    pub diffusion_delay: f64,
    #[serde(default)]
    pub diffusion_const: f64,
    #[serde(default)]
    pub diffusion_control: f64,
    #[serde(default)]
    pub running_cost: f64,
    #[serde(default = "default_terminal")]
    pub terminal: TerminalCost,
    /// Open interval `(lower, upper)` for `S(t)`; `None` means no exit.
    #[serde(default)]
    pub region: Option<(f64, f64)>,
    #[serde(default = "one")]
    pub control_upper: f64,
    #[serde(default)]
    pub control_lower: f64,
}

fn default_terminal() -> TerminalCost {
    TerminalCost::Zero
}

impl Default for LinearDelayModel {
    fn default() -> Self {
        Self {
            drift_x: 0.0,
            drift_delay: 0.0,
            drift_const: 0.0,
            drift_control: 0.0,
            diffusion_x: 0.0,
            diffusion_delay: 0.0,
            diffusion_const: 0.0,
            diffusion_control: 0.0,
            running_cost: 0.0,
            terminal: TerminalCost::Zero,
            region: None,
            control_upper: 1.0,
            control_lower: 0.0,
        }
    }
}

impl LinearDelayModel {
    /// Delay-free geometric Brownian motion `dS = μS dt + σS dW`.
    pub fn gbm(mu: f64, sigma: f64) -> Self {
        Self {
            drift_x: mu,
            diffusion_x: sigma,
            ..Self::default()
        }
    }

    /// `dS = σ dW` on the open interval `(lo, hi)`.
    pub fn brownian(sigma: f64, region: Option<(f64, f64)>) -> Self {
        Self {
            diffusion_const: sigma,
            region,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.drift_x,
            self.drift_delay,
            self.drift_const,
            self.drift_control,
            self.diffusion_x,
            self.diffusion_delay,
            self.diffusion_const,
            self.diffusion_control,
            self.running_cost,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(SfdeError::InvalidParameter(
                "model coefficients must be finite".into(),
            ));
        }
        if let Some((lo, hi)) = self.region {
            if !(lo < hi) {
                return Err(SfdeError::InvalidParameter(
                    "region needs lower < upper".into(),
                ));
            }
        }
        if !(self.control_lower <= self.control_upper) {
            return Err(SfdeError::InvalidParameter(
                "control bounds inverted".into(),
            ));
        }
        Ok(())
    }

    fn control(&self, u: &[f64]) -> f64 {
        u.first()
            .copied()
            .unwrap_or(0.0)
            .clamp(self.control_lower, self.control_upper)
    }
}

impl Coefficients for LinearDelayModel {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn drift(&self, seg: &Segment<'_>, x: &[f64], u: &[f64], out: &mut [f64]) {
        let u = self.control(u);
        out[0] = self.drift_x * x[0]
            + self.drift_delay * seg.oldest()[0]
            + self.drift_const
            + self.drift_control * u * x[0];
    }
    fn diffusion(&self, seg: &Segment<'_>, x: &[f64], u: &[f64], out: &mut [f64]) {
        let u = self.control(u);
        out[0] = self.diffusion_x * x[0]
            + self.diffusion_delay * seg.oldest()[0]
            + self.diffusion_const
            + self.diffusion_control * u * x[0];
    }
    fn running_cost(&self, _seg: &Segment<'_>, _x: &[f64], _u: &[f64]) -> f64 {
        self.running_cost
    }
    fn terminal_cost(&self, _seg: &Segment<'_>, x: &[f64]) -> f64 {
        self.terminal.eval(x[0])
    }
    fn in_region(&self, _seg: &Segment<'_>, x: &[f64]) -> bool {
        match self.region {
            Some((lo, hi)) => lo < x[0] && x[0] < hi,
            None => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamped_law_respects_box() {
        let law = FnLaw::new(1, |_s: &Segment<'_>, x: &[f64], out: &mut [f64]| {
            out[0] = 3.0 * x[0]
        })
        .clamped(ControlBox::interval(0.0, 1.0).unwrap());
        let vals = [0.0, 0.0];
        let seg = Segment::new(&vals, 1, 1.0);
        let mut out = [0.0];
        law.evaluate(&seg, &[2.0], &mut out);
        assert_eq!(out[0], 1.0);
        law.evaluate(&seg, &[-2.0], &mut out);
        assert_eq!(out[0], 0.0);
        law.evaluate(&seg, &[0.1], &mut out);
        assert!((out[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn control_box_validation() {
        assert!(ControlBox::new(vec![1.0], vec![0.0]).is_err());
        assert!(ControlBox::new(vec![0.0], vec![1.0, 2.0]).is_err());
        let b = ControlBox::interval(0.0, 1.0).unwrap();
        assert!(b.contains(&[0.5]));
        assert!(!b.contains(&[1.5]));
    }

    #[test]
    fn linear_model_region_and_terminal() {
        let m = LinearDelayModel {
            terminal: TerminalCost::Power { exponent: 0.5 },
            region: Some((0.0, 1.0)),
            ..LinearDelayModel::default()
        };
        let vals = [0.0, 0.0];
        let seg = Segment::new(&vals, 1, 1.0);
        assert!(m.in_region(&seg, &[0.5]));
        assert!(!m.in_region(&seg, &[1.0]));
        assert_eq!(m.terminal_cost(&seg, &[4.0]), 2.0);
        assert_eq!(m.terminal_cost(&seg, &[-4.0]), 0.0);
    }
}
