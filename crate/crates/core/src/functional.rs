//! Smooth functionals `f(φ, x)` with analytic `x`-derivatives.

use crate::segment::Segment;

/// `f(φ, x)` together with `∂f/∂x` and `∂²f/∂x²`. The Hessian is written
/// row-major `n × n`. An analytic shift term `Γf` may be supplied; otherwise
/// it is obtained by finite differences of the shifted segment.
pub trait SmoothFunctional: Sync {
    fn value(&self, seg: &Segment<'_>, x: &[f64]) -> f64;
    fn grad_x(&self, seg: &Segment<'_>, x: &[f64], out: &mut [f64]);
    fn hess_x(&self, seg: &Segment<'_>, x: &[f64], out: &mut [f64]);
    fn gamma_analytic(&self, _seg: &Segment<'_>, _x: &[f64]) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl SmoothFunctional for Constant {
    fn value(&self, _seg: &Segment<'_>, _x: &[f64]) -> f64 {
        self.0
    }
    fn grad_x(&self, _seg: &Segment<'_>, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn hess_x(&self, _seg: &Segment<'_>, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn gamma_analytic(&self, _seg: &Segment<'_>, _x: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

/// `w · x`
#[derive(Debug, Clone, PartialEq)]
pub struct Linear(pub Vec<f64>);

impl SmoothFunctional for Linear {
    fn value(&self, _seg: &Segment<'_>, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(w, v)| w * v).sum()
    }
    fn grad_x(&self, _seg: &Segment<'_>, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
    fn hess_x(&self, _seg: &Segment<'_>, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn gamma_analytic(&self, _seg: &Segment<'_>, _x: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

/// `|x|²`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredNorm;

impl SmoothFunctional for SquaredNorm {
    fn value(&self, _seg: &Segment<'_>, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }
    fn grad_x(&self, _seg: &Segment<'_>, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = 2.0 * v;
        }
    }
    fn hess_x(&self, _seg: &Segment<'_>, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        out.fill(0.0);
        for i in 0..n {
            out[i * n + i] = 2.0;
        }
    }
    fn gamma_analytic(&self, _seg: &Segment<'_>, _x: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

/// Scalar `x^p`, for `x > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Power(pub f64);

impl SmoothFunctional for Power {
    fn value(&self, _seg: &Segment<'_>, x: &[f64]) -> f64 {
        x[0].powf(self.0)
    }
    fn grad_x(&self, _seg: &Segment<'_>, x: &[f64], out: &mut [f64]) {
        out[0] = self.0 * x[0].powf(self.0 - 1.0);
    }
    fn hess_x(&self, _seg: &Segment<'_>, x: &[f64], out: &mut [f64]) {
        out[0] = self.0 * (self.0 - 1.0) * x[0].powf(self.0 - 2.0);
    }
    fn gamma_analytic(&self, _seg: &Segment<'_>, _x: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

/// Scalar `‖φ‖² x^p`, the portfolio value candidate.
///
/// Shifting the segment by `h` replaces the oldest `h` of history by the
/// constant `x`, so `d/dh ‖φ̂ₕ‖² = x² - φ(-r)²` and
/// `Γf = x^p (x² - φ(-r)²)`. On the left-Riemann grid this equals the
/// one-step forward difference exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSquaredPower {
    pub exponent: f64,
    /// When false, `Γf` is left to finite differences.
    pub analytic_gamma: bool,
}

impl NormSquaredPower {
    pub fn new(exponent: f64) -> Self {
        Self {
            exponent,
            analytic_gamma: true,
        }
    }

    pub fn finite_difference(exponent: f64) -> Self {
        Self {
            exponent,
            analytic_gamma: false,
        }
    }
}

impl SmoothFunctional for NormSquaredPower {
    fn value(&self, seg: &Segment<'_>, x: &[f64]) -> f64 {
        seg.norm_squared() * x[0].powf(self.exponent)
    }
    fn grad_x(&self, seg: &Segment<'_>, x: &[f64], out: &mut [f64]) {
        let p = self.exponent;
        out[0] = seg.norm_squared() * p * x[0].powf(p - 1.0);
    }
    fn hess_x(&self, seg: &Segment<'_>, x: &[f64], out: &mut [f64]) {
        let p = self.exponent;
        out[0] = seg.norm_squared() * p * (p - 1.0) * x[0].powf(p - 2.0);
    }
    fn gamma_analytic(&self, seg: &Segment<'_>, x: &[f64]) -> Option<f64> {
        if !self.analytic_gamma {
            return None;
        }
        let oldest = seg.oldest()[0];
        Some(x[0].powf(self.exponent) * (x[0] * x[0] - oldest * oldest))
    }
}

type ValueFn = Box<dyn Fn(&Segment<'_>, &[f64]) -> f64 + Send + Sync>;
type DerivFn = Box<dyn Fn(&Segment<'_>, &[f64], &mut [f64]) + Send + Sync>;

/// Functional assembled from closures.
pub struct FnFunctional {
    value: ValueFn,
    grad: DerivFn,
    hess: DerivFn,
    gamma: Option<ValueFn>,
}

impl FnFunctional {
    pub fn new(
        value: impl Fn(&Segment<'_>, &[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&Segment<'_>, &[f64], &mut [f64]) + Send + Sync + 'static,
        hess: impl Fn(&Segment<'_>, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Box::new(value),
            grad: Box::new(grad),
            hess: Box::new(hess),
            gamma: None,
        }
    }

    pub fn with_gamma(
        mut self,
        gamma: impl Fn(&Segment<'_>, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.gamma = Some(Box::new(gamma));
        self
    }
}

impl SmoothFunctional for FnFunctional {
    fn value(&self, seg: &Segment<'_>, x: &[f64]) -> f64 {
        (self.value)(seg, x)
    }
    fn grad_x(&self, seg: &Segment<'_>, x: &[f64], out: &mut [f64]) {
        (self.grad)(seg, x, out)
    }
    fn hess_x(&self, seg: &Segment<'_>, x: &[f64], out: &mut [f64]) {
        (self.hess)(seg, x, out)
    }
    fn gamma_analytic(&self, seg: &Segment<'_>, x: &[f64]) -> Option<f64> {
        self.gamma.as_ref().map(|g| g(seg, x))
    }
}

/// Largest `|H - Hᵀ|` entry and worst gradient/central-difference mismatch
/// relative to `max(1e-6, 1e-4·|grad|)`; both checks pass when the second
/// value is at most 1.
pub fn derivative_consistency(
    f: &dyn SmoothFunctional,
    seg: &Segment<'_>,
    x: &[f64],
) -> (f64, f64) {
    let n = x.len();
    let mut hess = vec![0.0; n * n];
    f.hess_x(seg, x, &mut hess);
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((hess[i * n + j] - hess[j * n + i]).abs());
        }
    }
    let mut grad = vec![0.0; n];
    f.grad_x(seg, x, &mut grad);
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..n {
        let step = 1e-5 * x[i].abs().max(1.0);
        probe[i] = x[i] + step;
        let up = f.value(seg, &probe);
        probe[i] = x[i] - step;
        let down = f.value(seg, &probe);
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * step);
        let tol = (1e-4 * grad[i].abs()).max(1e-6);
        worst = worst.max((fd - grad[i]).abs() / tol);
    }
    (asym, worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_agree_with_finite_differences() {
        let vals: Vec<f64> = (0..=20).map(|i| 1.0 + 0.1 * i as f64).collect();
        let seg = Segment::new(&vals, 1, 0.05);
        let fs: Vec<Box<dyn SmoothFunctional>> = vec![
            Box::new(Constant(2.0)),
            Box::new(Linear(vec![3.0])),
            Box::new(SquaredNorm),
            Box::new(Power(0.5)),
            Box::new(NormSquaredPower::new(0.5)),
        ];
        for f in &fs {
            for x in [0.3, 1.0, 4.0] {
                let (asym, worst) = derivative_consistency(f.as_ref(), &seg, &[x]);
                assert!(asym <= 1e-10);
                assert!(worst <= 1.0, "x={x} worst={worst}");
            }
        }
    }

    #[test]
    fn vector_quadratic_hessian_is_symmetric() {
        let vals = [0.0; 6];
        let seg = Segment::new(&vals, 2, 0.5);
        let (asym, worst) = derivative_consistency(&SquaredNorm, &seg, &[1.0, -2.0]);
        assert_eq!(asym, 0.0);
        assert!(worst <= 1.0);
    }
}
