use sfde_control::functional::{Linear, NormSquaredPower, Power, SmoothFunctional, SquaredNorm};
use sfde_control::generator::{
    dirichlet_candidate_residual, dirichlet_poisson_estimate, dynkin_check, gamma_apply,
    gamma_finite_difference, generator_apply, weak_generator_estimate_corrected,
};
use sfde_control::model::LinearDelayModel;
use sfde_control::{
    BatchConfig, ConstantLaw, ControlledState, FnCoefficients, SegmentPath, SimulationGrid,
    StoppingRule,
};

use proptest::prelude::*;

fn state_from(grid: SimulationGrid, f: impl Fn(f64) -> f64) -> ControlledState {
    ControlledState::from_segment(SegmentPath::from_fn(grid, f).unwrap())
}

#[test]
fn gbm_square_generator_is_closed_form() {
    let grid = SimulationGrid::new(1e-3, 1.0, 1e-3).unwrap();
    let st = state_from(grid, |_| 1.0);
    let g = generator_apply(
        &SquaredNorm,
        &LinearDelayModel::gbm(0.1, 0.2),
        &[0.0],
        &st,
        1e-3,
    )
    .unwrap();
    assert!((g - 0.24).abs() < 1e-15, "{g}");
}

#[test]
fn delayed_linear_generator_matches_hand_expansion() {
    // A x² = 2x(a x + b φ(-r)) + (c x + e φ(-r))²
    let grid = SimulationGrid::new(0.5, 1.0, 0.01).unwrap();
    let st = state_from(grid, |s| 1.0 + s + 0.2 * s * s);
    let model = LinearDelayModel {
        drift_x: -0.3,
        drift_delay: 0.7,
        diffusion_x: 0.25,
        diffusion_delay: -0.4,
        ..Default::default()
    };
    let x: f64 = 1.0;
    let old: f64 = 1.0 - 0.5 + 0.2 * 0.25;
    let expected = 2.0 * x * (-0.3 * x + 0.7 * old) + (0.25 * x - 0.4 * old).powi(2);
    let g = generator_apply(&SquaredNorm, &model, &[0.0], &st, 0.04).unwrap();
    assert!((g - expected).abs() < 1e-12, "{g} vs {expected}");
    // x² does not depend on the history, so the shift term vanishes
    assert_eq!(gamma_apply(&SquaredNorm, &st, 0.04).unwrap(), 0.0);
}

#[test]
fn weak_estimate_of_delayed_generator() {
    let grid = SimulationGrid::new(0.5, 1.0, 1e-3).unwrap();
    let st = state_from(grid, |s| 1.0 + 0.5 * s);
    let model = LinearDelayModel {
        drift_x: 0.1,
        drift_delay: 0.2,
        diffusion_x: 0.3,
        ..Default::default()
    };
    let law = ConstantLaw::scalar(0.0);
    let analytic = generator_apply(&SquaredNorm, &model, &[0.0], &st, 4e-3).unwrap();
    let est = weak_generator_estimate_corrected(
        &SquaredNorm,
        &model,
        &law,
        &st,
        &grid,
        4e-3,
        &BatchConfig::new(20_000, 3),
    )
    .unwrap();
    assert!(est.covers(analytic, 4.0, 0.01), "{est:?} vs {analytic}");
}

#[test]
fn parabola_solves_the_exit_time_problem() {
    // w = x(1-x): ½ w'' + 1 = 0
    let grid = SimulationGrid::new(0.01, 1.0, 0.01).unwrap();
    let model = LinearDelayModel::brownian(1.0, Some((0.0, 1.0)));
    let w = sfde_control::functional::FnFunctional::new(
        |_, x| x[0] * (1.0 - x[0]),
        |_, x, out| out[0] = 1.0 - 2.0 * x[0],
        |_, _, out| out[0] = -2.0,
    );
    for x in [0.1, 0.5, 0.9] {
        let st = state_from(grid, |_| x);
        let r = dirichlet_candidate_residual(
            &w,
            &model,
            &ConstantLaw::scalar(0.0),
            &st,
            &|_, _| 1.0,
            0.01,
        )
        .unwrap();
        assert!(r.abs() < 1e-15, "{r}");
    }
}

#[test]
fn dirichlet_estimate_of_mean_exit_time() {
    let grid = SimulationGrid::new(1e-4, 2.0, 1e-4).unwrap();
    let model = LinearDelayModel::brownian(1.0, Some((0.0, 1.0)));
    let rep = dirichlet_poisson_estimate(
        &model,
        &ConstantLaw::scalar(0.0),
        &state_from(grid, |_| 0.3),
        &grid,
        &|_, _| 1.0,
        &|_, _| 0.0,
        &BatchConfig::new(4000, 12),
    )
    .unwrap();
    assert!(!rep.censored_warning);
    assert!(rep.estimate.covers(0.21, 4.0, 0.01), "{:?}", rep.estimate);
}

#[test]
fn dynkin_balance_for_martingale_exit() {
    let grid = SimulationGrid::new(1e-3, 2.0, 1e-3).unwrap();
    let model = LinearDelayModel::brownian(1.0, Some((0.0, 1.0)));
    let res = dynkin_check(
        &Linear(vec![1.0]),
        &model,
        &ConstantLaw::scalar(0.0),
        &state_from(grid, |_| 0.4),
        &grid,
        StoppingRule::RegionExit,
        &BatchConfig::new(4000, 2),
    )
    .unwrap();
    // A x = 0, so the right side is the starting value exactly
    assert_eq!(res.rhs.mean, 0.4);
    assert!(res.balanced(4.0, 0.02), "{res:?}");
}

#[test]
fn dynkin_with_history_dependent_drift() {
    let grid = SimulationGrid::new(0.2, 0.5, 1e-3).unwrap();
    let model = FnCoefficients::new(1, 1, 1)
        .drift(|seg, _, _, out| out[0] = -seg.norm())
        .diffusion(|_, x, _, out| out[0] = 0.3 * x[0]);
    let res = dynkin_check(
        &Power(2.0),
        &model,
        &ConstantLaw::scalar(0.0),
        &state_from(grid, |s| 1.0 + s),
        &grid,
        StoppingRule::FixedHorizon,
        &BatchConfig::new(4000, 5),
    )
    .unwrap();
    assert!(res.balanced(4.0, 0.01), "{res:?}");
}

proptest! {
    #[test]
    fn shift_difference_matches_analytic_shift(
        a in 0.2f64..2.0,
        b in -1.0f64..1.0,
        c in -1.0f64..1.0,
        x in 0.1f64..3.0,
        p in 0.1f64..0.9,
    ) {
        let grid = SimulationGrid::new(1.0, 1.0, 0.01).unwrap();
        let seg = SegmentPath::from_fn(grid, |s| a + b * s + c * s * s).unwrap();
        let st = ControlledState::new(seg, vec![x]).unwrap();
        let f = NormSquaredPower::new(p);
        // one grid step reproduces the analytic shift; longer steps average
        // x² - φ² over the dropped points, an O(h) error bounded by the slope of φ²
        let slope = 2.0 * (a + b.abs() + c.abs()) * (b.abs() + 2.0 * c.abs());
        for h in [0.01, 0.02, 0.04] {
            let fd = gamma_finite_difference(&f, &st, h).unwrap();
            let an = gamma_apply(&f, &st, h).unwrap();
            let tol = x.powf(p) * slope * (h - 0.01) + 1e-9 * (1.0 + an.abs());
            prop_assert!((fd - an).abs() <= tol, "h = {}: {} {}", h, fd, an);
        }
        let (sg, xv) = st.view();
        let expected = x.powf(p) * (x * x - sg.oldest()[0].powi(2));
        let an = gamma_apply(&f, &st, 0.01).unwrap();
        prop_assert!((an - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
        prop_assert!(f.value(&sg, xv).is_finite());
    }
}
