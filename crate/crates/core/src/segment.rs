//! History segments `φ ∈ L²([-r, 0], ℝⁿ)` sampled on the simulation grid,
//! controlled states `(φ, x)`, and the extract/shift operations on them.

use crate::error::{Result, SfdeError};
use crate::grid::SimulationGrid;

/// Borrowed view of a segment: `n_history + 1` points of dimension `dim`,
/// ordered from time `-r` to time `0`.
///
/// The squared-norm accumulator is carried alongside the samples so the
/// simulator can maintain it incrementally along a path.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    values: &'a [f64],
    dim: usize,
    dt: f64,
    sum_sq: f64,
}

impl<'a> Segment<'a> {
    pub(crate) fn new(values: &'a [f64], dim: usize, dt: f64) -> Self {
        let n = values.len() / dim - 1;
        let sum_sq = values[..n * dim].iter().map(|v| v * v).sum();
        Self {
            values,
            dim,
            dt,
            sum_sq,
        }
    }

    pub(crate) fn with_sum_sq(values: &'a [f64], dim: usize, dt: f64, sum_sq: f64) -> Self {
        Self {
            values,
            dim,
            dt,
            sum_sq,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of grid steps in the window (`r / dt`).
    pub fn n_history(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn delay(&self) -> f64 {
        self.n_history() as f64 * self.dt
    }

    /// Raw samples, point-major.
    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    /// Sample `i`, where `i = 0` is time `-r` and `i = n_history` is time 0.
    pub fn point(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Sample `lag` steps before time 0.
    pub fn at_lag(&self, lag: usize) -> &'a [f64] {
        self.point(self.n_history() - lag)
    }

    /// `φ(-r)`
    pub fn oldest(&self) -> &'a [f64] {
        self.point(0)
    }

    /// `φ(0)`
    pub fn latest(&self) -> &'a [f64] {
        self.point(self.n_history())
    }

    /// Left-endpoint Riemann approximation of `‖φ‖²`.
    pub fn norm_squared(&self) -> f64 {
        self.sum_sq * self.dt
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn to_owned_path(&self, grid: SimulationGrid) -> SegmentPath {
        SegmentPath {
            grid,
            dim: self.dim,
            values: self.values.to_vec(),
        }
    }
}

/// L² norm of a segment on `[-r, 0]`, left-endpoint quadrature.
pub fn segment_norm(seg: &Segment<'_>) -> f64 {
    seg.norm()
}

/// Owned segment tied to a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPath {
    grid: SimulationGrid,
    dim: usize,
    values: Vec<f64>,
}

impl SegmentPath {
    pub fn from_values(grid: SimulationGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(SfdeError::Shape(
                "segment dimension must be positive".into(),
            ));
        }
        let expected = (grid.n_history() + 1) * dim;
        if values.len() != expected {
            return Err(SfdeError::Shape(format!(
                "segment needs {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SfdeError::InvalidParameter(
                "segment values must be finite".into(),
            ));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn constant(grid: SimulationGrid, value: &[f64]) -> Result<Self> {
        let n = grid.n_history() + 1;
        let values = value
            .iter()
            .copied()
            .cycle()
            .take(n * value.len())
            .collect();
        Self::from_values(grid, value.len(), values)
    }

    /// Scalar segment sampled from `f(s)` for `s = -r, -r + dt, …, 0`.
    pub fn from_fn(grid: SimulationGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let n = grid.n_history();
        let values = (0..=n).map(|i| f(-((n - i) as f64) * grid.dt())).collect();
        Self::from_values(grid, 1, values)
    }

    pub fn grid(&self) -> SimulationGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn view(&self) -> Segment<'_> {
        Segment::new(&self.values, self.dim, self.grid.dt())
    }

    pub fn norm(&self) -> f64 {
        self.view().norm()
    }

    /// Time offset of sample `i` (in `[-r, 0]`).
    pub fn offset(&self, i: usize) -> f64 {
        -((self.grid.n_history() - i) as f64) * self.grid.dt()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            dim: self.dim,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// Pointwise sum; both segments must share grid and dimension.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim || self.values.len() != other.values.len() {
            return Err(SfdeError::Shape("segments differ in shape".into()));
        }
        Ok(Self {
            grid: self.grid,
            dim: self.dim,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }
}

/// The pair `(S_t, S(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledState {
    segment: SegmentPath,
    current: Vec<f64>,
}

impl ControlledState {
    pub fn new(segment: SegmentPath, current: Vec<f64>) -> Result<Self> {
        if current.len() != segment.dim() {
            return Err(SfdeError::Shape(format!(
                "current has dimension {}, segment has {}",
                current.len(),
                segment.dim()
            )));
        }
        if current.iter().any(|v| !v.is_finite()) {
            return Err(SfdeError::InvalidParameter(
                "current state must be finite".into(),
            ));
        }
        Ok(Self { segment, current })
    }

    /// State whose current value is the segment's value at time 0.
    pub fn from_segment(segment: SegmentPath) -> Self {
        let current = segment.view().latest().to_vec();
        Self { segment, current }
    }

    pub fn segment(&self) -> &SegmentPath {
        &self.segment
    }

    pub fn current(&self) -> &[f64] {
        &self.current
    }

    pub fn dim(&self) -> usize {
        self.current.len()
    }

    pub fn grid(&self) -> SimulationGrid {
        self.segment.grid()
    }

    pub fn view(&self) -> (Segment<'_>, &[f64]) {
        (self.segment.view(), &self.current)
    }
}

/// A sampled path on a contiguous range of grid steps (negative steps are
/// history).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: SimulationGrid,
    dim: usize,
    first_step: i64,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn new(
        grid: SimulationGrid,
        dim: usize,
        first_step: i64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(SfdeError::Shape(
                "trajectory length not a multiple of dim".into(),
            ));
        }
        Ok(Self {
            grid,
            dim,
            first_step,
            values,
        })
    }

    /// Scalar trajectory sampled from `f(t)` at steps `first_step..=last_step`.
    pub fn from_fn(
        grid: SimulationGrid,
        first_step: i64,
        last_step: i64,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let values = (first_step..=last_step)
            .map(|k| f(k as f64 * grid.dt()))
            .collect();
        Self::new(grid, 1, first_step, values)
    }

    pub fn grid(&self) -> SimulationGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn first_step(&self) -> i64 {
        self.first_step
    }

    pub fn last_step(&self) -> i64 {
        self.first_step + self.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// State at grid step `step`, if covered.
    pub fn at_step(&self, step: i64) -> Option<&[f64]> {
        if step < self.first_step || step > self.last_step() {
            return None;
        }
        let i = (step - self.first_step) as usize;
        Some(&self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn time_of(&self, index: usize) -> f64 {
        (self.first_step + index as i64) as f64 * self.grid.dt()
    }

    /// Segment ending at `step` as a borrowed view.
    pub(crate) fn segment_view_at(&self, step: i64) -> Option<Segment<'_>> {
        let n = self.grid.n_history() as i64;
        if step - n < self.first_step || step > self.last_step() {
            return None;
        }
        let lo = (step - n - self.first_step) as usize * self.dim;
        let hi = lo + (n as usize + 1) * self.dim;
        Some(Segment::new(&self.values[lo..hi], self.dim, self.grid.dt()))
    }
}

/// `S_t(p) = S(t + p)` for grid offsets `p ∈ [-r, 0]`.
pub fn segment_extract(path: &Trajectory, t: f64) -> Result<SegmentPath> {
    let step = path.grid().step_of(t)? as i64;
    let view = path.segment_view_at(step).ok_or_else(|| {
        SfdeError::InvalidParameter(format!("trajectory does not cover [{} - r, {}]", t, t))
    })?;
    Ok(view.to_owned_path(path.grid()))
}

/// Shifted segment: value `x` at offsets `s ≥ -t`, `φ(s + t)` before that.
/// Shifts past the full window give the constant segment `x`.
pub fn segment_shift(seg: &SegmentPath, x: &[f64], t: f64) -> Result<SegmentPath> {
    if x.len() != seg.dim() {
        return Err(SfdeError::Shape(format!(
            "shift value has dimension {}, segment has {}",
            x.len(),
            seg.dim()
        )));
    }
    let grid = seg.grid();
    let m = grid.step_of(t)?.min(grid.n_history());
    let n = grid.n_history();
    let dim = seg.dim();
    let mut values = Vec::with_capacity(seg.values().len());
    for i in 0..=n {
        if i + m >= n {
            values.extend_from_slice(x);
        } else {
            values.extend_from_slice(&seg.values()[(i + m) * dim..(i + m + 1) * dim]);
        }
    }
    SegmentPath::from_values(grid, dim, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(dt: f64) -> SimulationGrid {
        SimulationGrid::new(1.0, 1.0, dt).unwrap()
    }

    #[test]
    fn norm_of_constant_one_is_exact() {
        let seg = SegmentPath::constant(unit_grid(0.01), &[1.0]).unwrap();
        assert_eq!(seg.norm(), 1.0);
        let zero = SegmentPath::constant(unit_grid(0.01), &[0.0]).unwrap();
        assert_eq!(zero.norm(), 0.0);
    }

    #[test]
    fn norm_of_identity_segment_converges() {
        // ∫_{-1}^0 s² ds = 1/3
        let exact = (1.0f64 / 3.0).sqrt();
        let mut prev_err = f64::INFINITY;
        for dt in [1e-2, 1e-3, 1e-4] {
            let seg = SegmentPath::from_fn(unit_grid(dt), |s| s).unwrap();
            let err = (seg.norm() - exact).abs();
            assert!(err <= dt, "dt={dt} err={err}");
            assert!(err < prev_err);
            prev_err = err;
        }
    }

    #[test]
    fn extract_at_zero_is_initial_history() {
        let g = unit_grid(0.1);
        let traj = Trajectory::from_fn(g, -10, 10, |t| t * t).unwrap();
        let seg = segment_extract(&traj, 0.0).unwrap();
        let phi = SegmentPath::from_fn(g, |s| s * s).unwrap();
        assert_eq!(seg, phi);
    }

    #[test]
    fn extract_constant_and_linear() {
        let g = unit_grid(0.1);
        let traj = Trajectory::from_fn(g, -10, 10, |_| 3.0).unwrap();
        for k in 0..=10 {
            let seg = segment_extract(&traj, k as f64 * 0.1).unwrap();
            assert!(seg.values().iter().all(|&v| v == 3.0));
        }
        let traj = Trajectory::from_fn(g, -10, 10, |t| t).unwrap();
        let seg = segment_extract(&traj, 0.5).unwrap();
        for i in 0..=10 {
            let s = seg.offset(i);
            assert!((seg.values()[i] - (s + 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn extract_rejects_misaligned_and_uncovered() {
        let g = unit_grid(0.1);
        let traj = Trajectory::from_fn(g, -10, 10, |t| t).unwrap();
        assert!(matches!(
            segment_extract(&traj, 0.05),
            Err(SfdeError::Alignment { .. })
        ));
        assert!(segment_extract(&traj, 1.5).is_err());
    }

    #[test]
    fn shift_examples() {
        let g = unit_grid(0.1);
        let phi = SegmentPath::from_fn(g, |s| s).unwrap();
        assert_eq!(segment_shift(&phi, &[0.0], 0.0).unwrap(), phi);
        let full = segment_shift(&phi, &[2.0], 1.0).unwrap();
        assert!(full.values().iter().all(|&v| v == 2.0));
        let beyond = segment_shift(&phi, &[2.0], 3.0).unwrap();
        assert_eq!(beyond, full);
        let half = segment_shift(&phi, &[0.0], 0.5).unwrap();
        for i in 0..=10 {
            let s = half.offset(i);
            let expected = if s >= -0.5 - 1e-12 { 0.0 } else { s + 0.5 };
            assert!((half.values()[i] - expected).abs() < 1e-12, "s={s}");
        }
        assert!(segment_shift(&phi, &[0.0], -0.1).is_err());
        assert!(segment_shift(&phi, &[0.0, 1.0], 0.1).is_err());
    }

    #[test]
    fn state_from_segment_uses_latest_value() {
        let g = unit_grid(0.1);
        let phi = SegmentPath::from_fn(g, |s| s + 2.0).unwrap();
        let st = ControlledState::from_segment(phi);
        assert_eq!(st.current(), &[2.0]);
        assert!(ControlledState::new(st.segment().clone(), vec![f64::NAN]).is_err());
    }

    fn seg_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 21)
    }

    proptest! {
        #[test]
        fn norm_is_homogeneous(vals in seg_strategy(), c in -5.0f64..5.0) {
            let g = SimulationGrid::new(1.0, 1.0, 0.05).unwrap();
            let phi = SegmentPath::from_values(g, 1, vals).unwrap();
            let lhs = phi.scale(c).norm();
            let rhs = c.abs() * phi.norm();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn triangle_inequality(a in seg_strategy(), b in seg_strategy()) {
            let g = SimulationGrid::new(1.0, 1.0, 0.05).unwrap();
            let pa = SegmentPath::from_values(g, 1, a).unwrap();
            let pb = SegmentPath::from_values(g, 1, b).unwrap();
            prop_assert!(pa.add(&pb).unwrap().norm() <= pa.norm() + pb.norm() + 1e-12);
        }

        #[test]
        fn shift_is_a_semigroup(vals in seg_strategy(), x in -3.0f64..3.0, k1 in 0usize..=20, k2 in 0usize..=20) {
            prop_assume!(k1 + k2 <= 20);
            let g = SimulationGrid::new(1.0, 1.0, 0.05).unwrap();
            let phi = SegmentPath::from_values(g, 1, vals).unwrap();
            let t1 = g.time_of(k1);
            let t2 = g.time_of(k2);
            let twice = segment_shift(&segment_shift(&phi, &[x], t1).unwrap(), &[x], t2).unwrap();
            let once = segment_shift(&phi, &[x], g.time_of(k1 + k2)).unwrap();
            prop_assert_eq!(twice, once);
        }

        #[test]
        fn extract_then_read_zero_offset(vals in prop::collection::vec(-5.0f64..5.0, 41), k in 0usize..=20) {
            let g = SimulationGrid::new(1.0, 1.0, 0.05).unwrap();
            let traj = Trajectory::new(g, 1, -20, vals).unwrap();
            let seg = segment_extract(&traj, g.time_of(k)).unwrap();
            prop_assert_eq!(seg.view().latest(), traj.at_step(k as i64).unwrap());
        }
    }
}
